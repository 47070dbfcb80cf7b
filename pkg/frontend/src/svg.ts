/**
 * Deterministic SVG rendering of sweep curves: log-scaled learning-rate axis,
 * one polyline per group (split at gaps), red dots on each curve's optimum.
 */

import { GroupKey, Metric, SweepCurve } from './frame';

const WIDTH = 760;
const HEIGHT = 480;
const MARGIN = { left: 70, right: 170, top: 40, bottom: 55 };

const PALETTE = ['#1f77b4', '#ff7f0e', '#2ca02c', '#9467bd', '#8c564b', '#17becf', '#7f7f7f'];

function fmt(v: number): string {
  return Number(v.toPrecision(6)).toString();
}

export function renderSvg(curves: SweepCurve[], groupBy: GroupKey, metric: Metric): string {
  const lrs = curves.flatMap((c) => c.points.map((p) => p.lr));
  const losses = curves.flatMap((c) => c.points.filter((p) => p.loss !== null).map((p) => p.loss!));
  if (lrs.length === 0) throw new Error('nothing to plot');
  const xLo = Math.log10(Math.min(...lrs));
  const xHi = Math.log10(Math.max(...lrs));
  const yLo = losses.length ? Math.min(...losses) : 0;
  const yHi = losses.length ? Math.max(...losses) : 1;
  const ySpan = yHi - yLo || 1;
  const plotW = WIDTH - MARGIN.left - MARGIN.right;
  const plotH = HEIGHT - MARGIN.top - MARGIN.bottom;

  const pad = 0.05 * ySpan;
  const px = (lr: number) =>
    MARGIN.left + ((Math.log10(lr) - xLo) / (xHi - xLo || 1)) * plotW;
  const py = (loss: number) =>
    MARGIN.top + (1 - (loss - (yLo - pad)) / (ySpan + 2 * pad)) * plotH;

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" ` +
    `viewBox="0 0 ${WIDTH} ${HEIGHT}" font-family="sans-serif" font-size="12">`,
  );
  parts.push(`<rect width="${WIDTH}" height="${HEIGHT}" fill="white"/>`);
  parts.push(
    `<text x="${WIDTH / 2}" y="20" text-anchor="middle" font-size="15">` +
    `final ${metric} vs learning rate, grouped by ${groupBy}</text>`,
  );

  // axes
  const x0 = MARGIN.left;
  const x1 = WIDTH - MARGIN.right;
  const y0 = HEIGHT - MARGIN.bottom;
  const y1 = MARGIN.top;
  parts.push(`<line x1="${x0}" y1="${y0}" x2="${x1}" y2="${y0}" stroke="black"/>`);
  parts.push(`<line x1="${x0}" y1="${y0}" x2="${x0}" y2="${y1}" stroke="black"/>`);
  for (let e = Math.ceil(xLo); e <= Math.floor(xHi) + 1e-9; e += 1) {
    const x = px(10 ** e);
    parts.push(`<line x1="${fmt(x)}" y1="${y0}" x2="${fmt(x)}" y2="${y0 + 5}" stroke="black"/>`);
    parts.push(
      `<text x="${fmt(x)}" y="${y0 + 20}" text-anchor="middle">1e${e}</text>`,
    );
  }
  for (let t = 0; t <= 4; t += 1) {
    const v = yLo + (ySpan * t) / 4;
    const y = py(v);
    parts.push(`<line x1="${x0 - 5}" y1="${fmt(y)}" x2="${x0}" y2="${fmt(y)}" stroke="black"/>`);
    parts.push(
      `<text x="${x0 - 9}" y="${fmt(y + 4)}" text-anchor="end">${fmt(Number(v.toPrecision(3)))}</text>`,
    );
  }
  parts.push(
    `<text x="${(x0 + x1) / 2}" y="${HEIGHT - 12}" text-anchor="middle">learning rate</text>`,
  );
  parts.push(
    `<text x="18" y="${(y0 + y1) / 2}" text-anchor="middle" ` +
    `transform="rotate(-90 18 ${(y0 + y1) / 2})">${metric}</text>`,
  );

  // curves: split polylines at gaps so diverged cells render as holes
  curves.forEach((curve, ci) => {
    const color = PALETTE[ci % PALETTE.length];
    let segment: string[] = [];
    const flush = () => {
      if (segment.length >= 2) {
        parts.push(
          `<polyline fill="none" stroke="${color}" stroke-width="1.8" ` +
          `points="${segment.join(' ')}"/>`,
        );
      }
      segment = [];
    };
    for (const p of curve.points) {
      if (p.loss === null) {
        flush();
      } else {
        segment.push(`${fmt(px(p.lr))},${fmt(py(p.loss))}`);
      }
    }
    flush();
    for (const p of curve.points) {
      if (p.loss !== null) {
        parts.push(
          `<circle cx="${fmt(px(p.lr))}" cy="${fmt(py(p.loss))}" r="2.5" fill="${color}"/>`,
        );
      }
    }
    if (curve.optimum && curve.optimum.loss !== null) {
      parts.push(
        `<circle cx="${fmt(px(curve.optimum.lr))}" cy="${fmt(py(curve.optimum.loss))}" ` +
        `r="5" fill="#d62728" stroke="black" stroke-width="0.8" class="optimum"/>`,
      );
    }
    const ly = MARGIN.top + 16 + ci * 18;
    parts.push(
      `<line x1="${x1 + 12}" y1="${ly - 4}" x2="${x1 + 34}" y2="${ly - 4}" ` +
      `stroke="${color}" stroke-width="2"/>`,
    );
    parts.push(`<text x="${x1 + 40}" y="${ly}">${groupBy} ${curve.group}</text>`);
  });
  parts.push('</svg>');
  return parts.join('\n') + '\n';
}
