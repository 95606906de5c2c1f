import init, * as abt from "./pkg/abt_web.js";

const $ = (id) => document.getElementById(id);

// Draws a row-major rows x cols grid, low frequencies at the bottom.
function heatmap(canvas, values, rows, cols, lo, hi, color) {
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(cols, rows);
  const min = lo ?? Math.min(...values);
  const max = hi ?? Math.max(...values);
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) {
      const t = Math.max(0, Math.min(1, (values[r * cols + c] - min) / (max - min || 1)));
      const [R, G, B] = color(t);
      const o = ((rows - 1 - r) * cols + c) * 4;
      img.data.set([R, G, B, 255], o);
    }
  }
  const tmp = new OffscreenCanvas(cols, rows);
  tmp.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, canvas.width, canvas.height);
}

const magma = (t) => [Math.round(255 * Math.min(1, 1.6 * t)), Math.round(255 * t * t), Math.round(255 * (0.3 + 0.4 * t))];
const diverging = (t) => (t < 0.5 ? [Math.round(510 * t), Math.round(510 * t), 255] : [255, Math.round(510 * (1 - t)), Math.round(510 * (1 - t))]);

function showError(e) {
  $("error").textContent = String(e);
}

function drawViews() {
  try {
    const v = abt.augmented_views(+$("cls").value, +$("clip").value, +$("view-seed").value);
    const all = [...v.original, ...v.first, ...v.second];
    const lo = Math.min(...all), hi = Math.max(...all);
    heatmap($("orig"), v.original, v.n_mels, v.n_frames, lo, hi, magma);
    heatmap($("v1"), v.first, v.n_mels, v.n_frames, lo, hi, magma);
    heatmap($("v2"), v.second, v.n_mels, v.n_frames, lo, hi, magma);
    $("error").textContent = "";
  } catch (e) {
    showError(e);
  }
}

function drawMask() {
  try {
    const ratio = +$("ratio").value;
    $("ratio-out").textContent = ratio.toFixed(2);
    const [rows, cols] = abt.mask_grid_shape();
    const flags = abt.masking_grid(ratio, +$("mask-seed").value);
    heatmap($("mask"), Array.from(flags, (f) => 1 - f), rows, cols, 0, 1, (t) => (t > 0.5 ? [120, 200, 140] : [40, 40, 40]));
    const masked = flags.reduce((a, b) => a + b, 0);
    $("mask-count").textContent = `${masked} of ${flags.length} patches masked, ${flags.length - masked} kept (+1 CLS token)`;
    $("error").textContent = "";
  } catch (e) {
    showError(e);
  }
}

function drawLoss() {
  try {
    const r = abt.loss_explorer(+$("batch").value, +$("dim").value, +$("noise").value, +$("shared").value, +$("lambda").value, 7);
    heatmap($("corr"), r.correlation, r.dim, r.dim, -1, 1, diverging);
    $("terms").textContent = `loss        ${r.loss.toFixed(4)}\ninvariance  ${r.invariance.toFixed(4)}\nredundancy  ${r.redundancy.toFixed(4)}`;
    $("error").textContent = "";
  } catch (e) {
    showError(e);
  }
}

await init();
abt.class_names().forEach((name, i) => $("cls").add(new Option(name, i)));
for (const id of ["cls", "clip", "view-seed"]) $(id).addEventListener("input", drawViews);
$("view-next").addEventListener("click", () => {
  $("view-seed").value = +$("view-seed").value + 1;
  drawViews();
});
for (const id of ["ratio", "mask-seed"]) $(id).addEventListener("input", drawMask);
for (const id of ["noise", "shared", "lambda", "batch", "dim"]) $(id).addEventListener("input", drawLoss);
drawViews();
drawMask();
drawLoss();
