import init, { synth_spectrogram, mask_pattern, score_demo } from "./pkg/gfl_fad_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function guard(errId, f) {
  $(errId).textContent = "";
  try {
    f();
  } catch (e) {
    $(errId).textContent = String(e);
  }
}

// Low bands at the bottom, grey scale between the min and max value.
function drawSpectrogram(canvas, spec) {
  const { bands, frames } = spec;
  const v = spec.values();
  let lo = Infinity, hi = -Infinity;
  for (const x of v) { lo = Math.min(lo, x); hi = Math.max(hi, x); }
  canvas.width = frames;
  canvas.height = bands;
  canvas.style.width = `${Math.min(frames * 2, 860)}px`;
  canvas.style.height = `${bands * 2}px`;
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(frames, bands);
  for (let b = 0; b < bands; b++) {
    for (let t = 0; t < frames; t++) {
      const g = Math.round(255 * (v[b * frames + t] - lo) / (hi - lo || 1));
      const o = 4 * ((bands - 1 - b) * frames + t);
      img.data.set([g, g, g, 255], o);
    }
  }
  ctx.putImageData(img, 0, 0);
  spec.free();
}

function renderSpectrograms() {
  guard("spec-err", () => {
    const args = [$("artifact").value, null, num("spec-seed"), num("spec-dur"), num("spec-bands")];
    for (const genuine of [true, false]) {
      args[1] = genuine;
      drawSpectrogram($(genuine ? "spec-genuine" : "spec-spoof"), synth_spectrogram(...args));
    }
  });
}

function renderMask() {
  guard("mask-err", () => {
    const f = num("mask-f"), t = num("mask-t");
    const flags = mask_pattern(f, t, num("mask-ratio"), $("mask-policy").value, num("mask-seed"));
    const cell = 16;
    const canvas = $("mask-canvas");
    canvas.width = t * cell;
    canvas.height = f * cell;
    const ctx = canvas.getContext("2d");
    let masked = 0;
    for (let i = 0; i < f; i++) {
      for (let j = 0; j < t; j++) {
        const m = flags[i * t + j];
        masked += m;
        ctx.fillStyle = m ? "#333" : "#9c6";
        ctx.fillRect(j * cell, (f - 1 - i) * cell, cell - 1, cell - 1);
      }
    }
    $("mask-info").textContent = `${masked} of ${f * t} patches masked`;
  });
}

function renderScores() {
  guard("score-err", () => {
    const r = score_demo(num("score-sep"), num("score-ng"), num("score-ns"), num("score-seed"), num("score-c1"), num("score-c2"));
    $("score-info").textContent =
      `EER ${(100 * r.eer).toFixed(2)}% at threshold ${r.threshold.toFixed(3)}\nmin t-DCF ${r.min_tdcf.toFixed(4)}`;
    const frr = r.frr(), far = r.far();
    r.free();
    const canvas = $("score-canvas");
    const ctx = canvas.getContext("2d");
    const w = canvas.width, h = canvas.height;
    ctx.clearRect(0, 0, w, h);
    ctx.strokeStyle = "#ccc";
    ctx.beginPath();
    ctx.moveTo(0, h);
    ctx.lineTo(w, 0);
    ctx.stroke();
    ctx.strokeStyle = "#036";
    ctx.beginPath();
    for (let i = 0; i < frr.length; i++) {
      const x = far[i] * w, y = h - frr[i] * h;
      i ? ctx.lineTo(x, y) : ctx.moveTo(x, y);
    }
    ctx.stroke();
    ctx.fillText("false alarm rate →", w - 110, h - 5);
    ctx.fillText("miss rate ↑", 5, 12);
  });
}

await init();
$("spec-go").onclick = renderSpectrograms;
$("mask-go").onclick = renderMask;
$("score-go").onclick = renderScores;
renderSpectrograms();
renderMask();
renderScores();
