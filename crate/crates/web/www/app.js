// Built with: wasm-bindgen --target web --out-dir www/pkg <popk_web.wasm>
import init, { Demo } from "./pkg/popk_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
let demo = null;

function mode() {
  return [document.querySelector(".logic").value, document.querySelector(".metric").value];
}

function fail(err) {
  $("status").textContent = String(err);
  $("status").className = "error";
}

function generate() {
  try {
    demo?.free();
    demo = Demo.synthetic(num("seed"), num("articles"), num("impressions"), num("hours"));
  } catch (err) {
    return fail(err);
  }
  const s = JSON.parse(demo.summary());
  $("status").className = "";
  $("status").textContent = `${s.articles} articles in ${s.categories} categories, ${s.impressions} impressions over hours ${s.first_bucket}–${s.last_bucket}`;
  $("hour").max = s.last_bucket + 1;
  $("position").max = s.impressions - 1;
  $("article").innerHTML = JSON.parse(demo.most_clicked(30)).map((id) => `<option>${id}</option>`).join("");
  ranking();
  preview();
  curve();
}

function ranking() {
  const hour = num("hour");
  $("hour-label").textContent = `start of hour ${hour}`;
  try {
    const rows = JSON.parse(demo.ranking(BigInt(hour), ...mode(), 10));
    $("ranking").innerHTML = "<tr><th>#</th><th>article</th><th>category</th><th>value</th></tr>" +
      rows.map((r, i) => `<tr><td>${i + 1}</td><td>${r.id}</td><td>${r.category}</td><td>${+r.value.toFixed(4)}</td></tr>`).join("");
    if (rows.length === 0) $("ranking").innerHTML += "<tr><td colspan=4>nothing visible yet</td></tr>";
  } catch (err) {
    fail(err);
  }
}

function preview() {
  try {
    const p = JSON.parse(demo.preview(num("position"), num("k"), num("popk"), ...mode(), num("seed")));
    const samples = p.samples.map((s) =>
      `<tr><td>${s.positive}</td><td>${s.negatives.map((n) =>
        `<span class="${n.popular ? "popular" : ""}">${n.id} (${n.category})</span>`).join(", ")}</td></tr>`).join("");
    $("preview").innerHTML = `<p>${p.impression_id} by ${p.user_id} in hour ${p.bucket}: ${p.candidates} candidates, ${p.history} history items. Popular substitutes are highlighted.</p>` +
      `<table><tr><th>positive</th><th>negatives</th></tr>${samples}</table>`;
  } catch (err) {
    $("preview").innerHTML = `<p class="error">${err}</p>`;
  }
}

function curve() {
  const canvas = $("curve");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (!$("article").value) return;
  const points = JSON.parse(demo.curve($("article").value, ...mode()));
  if (points.length === 0) return;
  const pad = 30;
  const w = (canvas.width - 2 * pad) / points.length;
  const maxViews = Math.max(1, ...points.map((p) => p.views));
  const values = points.map((p) => p.value);
  const lo = Math.min(0, ...values);
  const hi = Math.max(1e-9, ...values);
  const y = (frac) => canvas.height - pad - frac * (canvas.height - 2 * pad);
  points.forEach((p, i) => {
    ctx.fillStyle = "#cfd8e3";
    ctx.fillRect(pad + i * w, y(p.views / maxViews), w - 1, y(0) - y(p.views / maxViews));
    ctx.fillStyle = "#4a78b0";
    ctx.fillRect(pad + i * w, y(p.clicks / maxViews), w - 1, y(0) - y(p.clicks / maxViews));
  });
  ctx.strokeStyle = "#b04000";
  ctx.lineWidth = 2;
  ctx.beginPath();
  points.forEach((p, i) => {
    const py = y((p.value - lo) / (hi - lo));
    i === 0 ? ctx.moveTo(pad + (i + 0.5) * w, py) : ctx.lineTo(pad + (i + 0.5) * w, py);
  });
  ctx.stroke();
  ctx.fillStyle = "#222";
  ctx.fillText("bars: views and clicks per hour; line: popularity after each hour", pad, 14);
}

await init();
$("generate").onclick = generate;
$("preview-btn").onclick = preview;
$("hour").oninput = ranking;
$("article").onchange = curve;
for (const el of document.querySelectorAll(".logic, .metric")) {
  el.onchange = () => { ranking(); preview(); curve(); };
}
generate();
