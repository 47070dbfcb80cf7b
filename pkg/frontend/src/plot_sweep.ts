#!/usr/bin/env node
/**
 * plot_sweep <records.(csv|json)> <out.svg> [--group-by width|depth|mass]
 *            [--metric train_loss|test_loss]
 *
 * Renders a sweep record file into grouped loss-vs-learning-rate curves with
 * the optimum of each curve marked. Writes the image plus a sidecar
 * `<out>.data.csv` holding the exact plotted table, which is byte-identical
 * across re-renders of the same input.
 */

import * as fs from 'fs';

import { buildFrame, frameTable, GroupKey, Metric } from './frame';
import { parseRecords } from './records';
import { renderSvg } from './svg';

const GROUPS: GroupKey[] = ['width', 'depth', 'mass'];
const METRICS: Metric[] = ['train_loss', 'test_loss'];

export function main(argv: string[]): number {
  const positional: string[] = [];
  let groupBy: GroupKey = 'width';
  let metric: Metric = 'train_loss';
  for (let i = 0; i < argv.length; i += 1) {
    const arg = argv[i];
    if (arg === '--group-by') {
      const v = argv[++i] as GroupKey;
      if (!GROUPS.includes(v)) {
        console.error(`unknown group key "${v}" (expected ${GROUPS.join('|')})`);
        return 2;
      }
      groupBy = v;
    } else if (arg === '--metric') {
      const v = argv[++i] as Metric;
      if (!METRICS.includes(v)) {
        console.error(`unknown metric "${v}" (expected ${METRICS.join('|')})`);
        return 2;
      }
      metric = v;
    } else {
      positional.push(arg);
    }
  }
  if (positional.length !== 2) {
    console.error('usage: plot_sweep <records> <out.svg> [--group-by ...] [--metric ...]');
    return 2;
  }
  const [recordsPath, outPath] = positional;
  let text: string;
  try {
    text = fs.readFileSync(recordsPath, 'utf8');
  } catch (err) {
    console.error(`cannot read ${recordsPath}: ${(err as Error).message}`);
    return 1;
  }
  try {
    const records = parseRecords(text);
    const curves = buildFrame(records, groupBy, metric);
    fs.writeFileSync(outPath, renderSvg(curves, groupBy, metric));
    fs.writeFileSync(`${outPath}.data.csv`, frameTable(curves, groupBy, metric));
    const n = curves.reduce((acc, c) => acc + c.points.length, 0);
    console.log(`${outPath}: ${curves.length} curves, ${n} points (grouped by ${groupBy})`);
    return 0;
  } catch (err) {
    console.error((err as Error).message);
    return 1;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
