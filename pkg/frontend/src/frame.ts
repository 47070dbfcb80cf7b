/**
 * Groups record rows into one loss-vs-learning-rate curve per group value,
 * keeping only each run's final step. Diverged runs become gaps, never zeros.
 */

import { RunRecord } from './records';

export type GroupKey = 'width' | 'depth' | 'mass';
export type Metric = 'train_loss' | 'test_loss';

export interface SweepPoint {
  lr: number;
  /** null renders as a gap (diverged run or missing metric) */
  loss: number | null;
}

export interface SweepCurve {
  group: number;
  points: SweepPoint[];
  optimum: SweepPoint | null;
}

const GROUP_FIELD: Record<GroupKey, keyof RunRecord> = {
  width: 'width',
  depth: 'depth',
  mass: 'mass',
};

export function buildFrame(records: RunRecord[], groupBy: GroupKey, metric: Metric): SweepCurve[] {
  const field = GROUP_FIELD[groupBy];
  const finals = new Map<string, RunRecord>();
  for (const rec of records) {
    const key = `${rec[field]}@${rec.lr}`;
    const seen = finals.get(key);
    if (!seen || rec.step >= seen.step) finals.set(key, rec);
  }
  const byGroup = new Map<number, SweepPoint[]>();
  for (const rec of finals.values()) {
    const group = rec[field] as number;
    const raw = metric === 'train_loss' ? rec.trainLoss : rec.testLoss;
    const loss = raw === null || !Number.isFinite(raw) ? null : raw;
    if (!byGroup.has(group)) byGroup.set(group, []);
    byGroup.get(group)!.push({ lr: rec.lr, loss });
  }
  const curves: SweepCurve[] = [];
  for (const group of [...byGroup.keys()].sort((a, b) => a - b)) {
    const points = byGroup.get(group)!.sort((a, b) => a.lr - b.lr);
    let optimum: SweepPoint | null = null;
    for (const p of points) {
      if (p.loss !== null && (optimum === null || p.loss < optimum.loss!)) optimum = p;
    }
    curves.push({ group, points, optimum });
  }
  return curves;
}

/** Flat table of the plotted data, one row per point, for the sidecar file. */
export function frameTable(curves: SweepCurve[], groupBy: GroupKey, metric: Metric): string {
  const lines = [`${groupBy},lr,${metric},optimum`];
  for (const curve of curves) {
    for (const p of curve.points) {
      const loss = p.loss === null ? '' : p.loss.toPrecision(12);
      const star = curve.optimum !== null && p.lr === curve.optimum.lr ? '1' : '0';
      lines.push(`${curve.group},${p.lr.toPrecision(12)},${loss},${star}`);
    }
  }
  return lines.join('\n') + '\n';
}
