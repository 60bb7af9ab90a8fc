import init, { valueMap, cuttingWindow, trajectories } from './pkg/stochsynth_web.js';

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function report(id, fn) {
  const out = $(id);
  out.classList.remove('err');
  try {
    const t0 = performance.now();
    const text = fn();
    out.textContent = `${text}\n(${(performance.now() - t0).toFixed(0)} ms)`;
  } catch (e) {
    out.classList.add('err');
    out.textContent = String(e.message ?? e);
  }
}

// white (0) to dark blue (1)
function shade(v) {
  const c = Math.round(255 * (1 - v));
  return `rgb(${c},${Math.round(110 + 145 * (1 - v))},255)`;
}

// grid cell (i, j) -> canvas rectangle; i runs along x, j along y (up)
function cellRect(canvas, n, m, i, j) {
  const w = canvas.width / n, h = canvas.height / m;
  return [i * w, canvas.height - (j + 1) * h, w, h];
}

function drawBox(ctx, canvas, lo, hi, color) {
  const sx = canvas.width / 21, sy = canvas.height / 21;
  const px = (x) => (x + 10.5) * sx, py = (y) => canvas.height - (y + 10.5) * sy;
  ctx.strokeStyle = color;
  ctx.lineWidth = 2;
  ctx.strokeRect(px(lo[0]), py(hi[1]), px(hi[0]) - px(lo[0]), py(lo[1]) - py(hi[1]));
}

function heatmap() {
  const obj = $('h-obj').value;
  const v = valueMap(obj, num('h-sigma'), num('h-gamma'), num('h-T'));
  const [n0, n1] = [v[0], v[1]];
  const canvas = $('h-canvas'), ctx = canvas.getContext('2d');
  let min = 1, max = 0;
  for (let i = 0; i < n0; i++) {
    for (let j = 0; j < n1; j++) {
      const val = v[6 + i * n1 + j];
      min = Math.min(min, val); max = Math.max(max, val);
      ctx.fillStyle = shade(val);
      ctx.fillRect(...cellRect(canvas, n0, n1, i, j));
    }
  }
  if (obj === 'reach-avoid') {
    drawBox(ctx, canvas, [5, 5], [7, 7], '#080');
    drawBox(ctx, canvas, [-2, -2], [2, 2], '#c00');
  }
  return `${n0} x ${n1} states, values in [${min.toFixed(4)}, ${max.toFixed(4)}]`;
}

function windowView() {
  const w = cuttingWindow(num('w-sigma'), num('w-gamma'), num('w-eta'), num('w-dx'), num('w-dy'));
  const [radius, half, width, inside, rowMass] = w;
  const cells = w.slice(5);
  const peak = Math.max(...cells);
  const canvas = $('w-canvas'), ctx = canvas.getContext('2d');
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  for (let a = 0; a < width; a++) {
    for (let b = 0; b < width; b++) {
      ctx.fillStyle = shade(Math.sqrt(cells[a * width + b] / peak));
      ctx.fillRect(...cellRect(canvas, width, width, a, b));
    }
  }
  return [
    `radius x* = ${radius.toFixed(4)}, half width ${half} cells, window ${width} x ${width} = ${width * width} entries`,
    `mass inside the radius box ${inside.toFixed(6)}, mass kept by the window ${rowMass.toFixed(6)}`,
  ].join('\n');
}

function simulateRuns() {
  const out = trajectories(num('h-sigma'), num('h-gamma'), num('t-T'), num('t-x'), num('t-y'),
    num('t-runs'), BigInt(num('t-seed')));
  const [runs, ok, value] = out;
  const canvas = $('t-canvas'), ctx = canvas.getContext('2d');
  ctx.fillStyle = '#fff';
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  drawBox(ctx, canvas, [5, 5], [7, 7], '#080');
  drawBox(ctx, canvas, [-2, -2], [2, 2], '#c00');
  const sx = canvas.width / 21, sy = canvas.height / 21;
  const px = (x) => (x + 10.5) * sx, py = (y) => canvas.height - (y + 10.5) * sy;
  let k = 3;
  for (let r = 0; r < runs; r++) {
    const len = out[k], good = out[k + 1];
    const pts = out.slice(k + 2, k + 2 + 2 * len);
    k += 2 + 2 * len;
    ctx.strokeStyle = good ? 'rgba(0,120,0,.6)' : 'rgba(200,0,0,.6)';
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    for (let s = 0; s < len; s++) {
      const [x, y] = [pts[2 * s], pts[2 * s + 1]];
      s === 0 ? ctx.moveTo(px(x), py(y)) : ctx.lineTo(px(x), py(y));
    }
    ctx.stroke();
  }
  return `${ok}/${runs} runs reached the target; guaranteed probability V = ${value.toFixed(4)} ` +
    `(uses sigma and cutting probability from the value panel)`;
}

await init();
$('h-run').onclick = () => report('h-out', heatmap);
$('w-run').onclick = () => report('w-out', windowView);
$('t-run').onclick = () => report('t-out', simulateRuns);
report('w-out', windowView);
