// Build with: wasm-pack build crates/khm-wasm --target web --out-dir www/pkg
import init, { constant_names, coarea_constants, structure_scan, emhd_run } from "./pkg/khm_wasm.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function plot(canvas, series, { logx = false, logy = false, xlabel = "", ylabel = "" } = {}) {
  const ctx = canvas.getContext("2d");
  const W = canvas.width, H = canvas.height, pad = 50;
  ctx.clearRect(0, 0, W, H);
  const fx = logx ? Math.log10 : (v) => v;
  const fy = logy ? (v) => Math.log10(Math.abs(v) || 1e-300) : (v) => v;
  const pts = series.flatMap((s) => s.x.map((x, i) => [fx(x), fy(s.y[i])]));
  const xs = pts.map((p) => p[0]), ys = pts.map((p) => p[1]);
  let [x0, x1, y0, y1] = [Math.min(...xs), Math.max(...xs), Math.min(...ys), Math.max(...ys)];
  if (y0 === y1) { y0 -= 1; y1 += 1; }
  const X = (v) => pad + (W - 2 * pad) * (v - x0) / (x1 - x0 || 1);
  const Y = (v) => H - pad + (2 * pad - H) * (v - y0) / (y1 - y0);
  ctx.strokeStyle = "#888";
  ctx.strokeRect(pad, pad / 2, W - 2 * pad, H - 1.5 * pad);
  ctx.fillStyle = "#333";
  ctx.fillText(xlabel, W / 2, H - 10);
  ctx.fillText(ylabel, 5, pad / 2 - 5);
  ctx.fillText((logx ? 10 ** x0 : x0).toPrecision(3), pad, H - pad + 15);
  ctx.fillText((logx ? 10 ** x1 : x1).toPrecision(3), W - pad - 30, H - pad + 15);
  ctx.fillText((logy ? 10 ** y0 : y0).toPrecision(3), 2, H - pad);
  ctx.fillText((logy ? 10 ** y1 : y1).toPrecision(3), 2, pad / 2 + 10);
  series.forEach((s, k) => {
    ctx.strokeStyle = s.color;
    ctx.beginPath();
    s.x.forEach((x, i) => {
      const [px, py] = [X(fx(x)), Y(fy(s.y[i]))];
      i ? ctx.lineTo(px, py) : ctx.moveTo(px, py);
    });
    ctx.stroke();
    ctx.fillStyle = s.color;
    ctx.fillText(s.label, W - pad - 120, pad + 14 * k + 5);
  });
}

function columns(flat, width) {
  const rows = flat.length / width;
  return Array.from({ length: width }, (_, c) => Array.from({ length: rows }, (_, r) => flat[r * width + c]));
}

function showConstants() {
  const names = constant_names();
  try {
    const v = coarea_constants($("c-profile").value, num("c-eps"));
    const m = names.length;
    $("c-table").innerHTML = "<tr><th>constant</th><th>computed</th><th>exact</th></tr>" +
      names.map((n, i) => `<tr><td>${n}</td><td>${v[i].toFixed(12)}</td><td>${v[m + i].toFixed(12)}</td></tr>`).join("");
  } catch (e) {
    $("c-table").innerHTML = `<tr><td>${e.message ?? e}</td></tr>`;
  }
}

function runScan() {
  $("s-status").textContent = "running...";
  setTimeout(() => {
    try {
      const t = performance.now();
      const flat = structure_scan(num("s-n"), num("s-seed"), num("s-d"), 0.2, 2.0, 10, num("s-dirs"));
      const [l, el, et, ml] = columns(flat, 6);
      plot($("s-plot"), [
        { x: l, y: el, label: "|S_EL|", color: "#c33" },
        { x: l, y: et, label: "|S_ET|", color: "#36c" },
        { x: l, y: ml, label: "|S_ML|", color: "#393" },
      ], { logx: true, logy: true, xlabel: "λ" });
      $("s-status").textContent = `${(performance.now() - t).toFixed(0)} ms; small-λ slope → 2 for smooth fields`;
    } catch (e) {
      $("s-status").textContent = e.message ?? e;
    }
  });
}

function runEmhd() {
  $("e-status").textContent = "running...";
  setTimeout(() => {
    try {
      const flat = emhd_run(num("e-n"), 1, num("e-steps"), num("e-dt"));
      const [t, e, h] = columns(flat, 3);
      const rel = (a) => a.map((v) => (v - a[0]) / Math.abs(a[0]));
      plot($("e-plot"), [
        { x: t, y: rel(e), label: "ΔE / E", color: "#c33" },
        { x: t, y: rel(h), label: "ΔH_M / H_M", color: "#36c" },
      ], { xlabel: "t" });
      const last = (a) => Math.abs(rel(a).at(-1)).toExponential(1);
      $("e-status").textContent = `final drift E ${last(e)}, H_M ${last(h)}`;
    } catch (err) {
      $("e-status").textContent = err.message ?? err;
    }
  });
}

await init();
$("c-run").onclick = showConstants;
$("s-run").onclick = runScan;
$("e-run").onclick = runEmhd;
showConstants();
