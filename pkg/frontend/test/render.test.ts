import assert from 'node:assert/strict';
import { execFileSync } from 'node:child_process';
import * as fs from 'node:fs';
import * as os from 'node:os';
import * as path from 'node:path';
import { test } from 'node:test';

import { buildFrame } from '../src/frame';
import { parseRecords } from '../src/records';
import { renderSvg } from '../src/svg';
import { main } from '../src/plot_sweep';

const FIXTURES = path.join(__dirname, '..', '..', 'test', 'fixtures');

function tmpdir(): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), 'plot-sweep-'));
}

test('renders the real sweep CSV into a nonempty image with optimum markers', () => {
  const out = path.join(tmpdir(), 'sweep.svg');
  const code = main([path.join(FIXTURES, 'p8_sweep.csv'), out]);
  assert.equal(code, 0);
  const svg = fs.readFileSync(out, 'utf8');
  assert.ok(svg.length > 1000);
  assert.ok(svg.startsWith('<svg'));
  assert.equal((svg.match(/class="optimum"/g) ?? []).length, 4); // one red dot per width
  assert.ok(fs.existsSync(`${out}.data.csv`));
});

test('sidecar data table is identical across re-renders', () => {
  const dir = tmpdir();
  const a = path.join(dir, 'a.svg');
  const b = path.join(dir, 'b.svg');
  assert.equal(main([path.join(FIXTURES, 'p8_sweep.csv'), a, '--group-by', 'width']), 0);
  assert.equal(main([path.join(FIXTURES, 'p8_sweep.csv'), b, '--group-by', 'width']), 0);
  assert.equal(
    fs.readFileSync(`${a}.data.csv`, 'utf8'),
    fs.readFileSync(`${b}.data.csv`, 'utf8'),
  );
});

test('a diverged cell splits the polyline into two segments', () => {
  const records = parseRecords(fs.readFileSync(path.join(FIXTURES, 'diverged.csv'), 'utf8'));
  const curves = buildFrame(records, 'width', 'train_loss');
  const svg = renderSvg(curves, 'width', 'train_loss');
  // four finite points around one gap: segments 0.01-0.1 and a lone 10.0 point
  const polylines = svg.match(/<polyline/g) ?? [];
  assert.equal(polylines.length, 1); // lone trailing point draws no line
  assert.equal((svg.match(/<circle/g) ?? []).length, 3 + 1); // 3 points + optimum
});

test('monotone fixture puts the marker at the smallest learning rate', () => {
  const records = parseRecords(fs.readFileSync(path.join(FIXTURES, 'monotone.csv'), 'utf8'));
  const curves = buildFrame(records, 'width', 'train_loss');
  const svg = renderSvg(curves, 'width', 'train_loss');
  const marker = svg.match(/<circle cx="([0-9.]+)"[^/]*class="optimum"/);
  assert.ok(marker);
  // the optimum marker sits at the left edge of the plot area
  assert.ok(Number(marker![1]) < 100);
});

test('CLI surfaces bad arguments and unreadable inputs', () => {
  assert.equal(main([]), 2);
  assert.equal(main(['a.csv', 'b.svg', '--group-by', 'flavor']), 2);
  assert.equal(main([path.join(FIXTURES, 'nope.csv'), path.join(tmpdir(), 'x.svg')]), 1);
});

test('compiled CLI runs end to end as an executable', () => {
  const out = path.join(tmpdir(), 'cli.svg');
  const script = path.join(__dirname, '..', 'src', 'plot_sweep.js');
  execFileSync('node', [
    script, path.join(FIXTURES, 'p8_sweep.csv'), out,
    '--group-by', 'depth', '--metric', 'test_loss',
  ]);
  assert.ok(fs.readFileSync(out, 'utf8').includes('grouped by depth'));
});
