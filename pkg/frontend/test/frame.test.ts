import assert from 'node:assert/strict';
import * as fs from 'node:fs';
import * as path from 'node:path';
import { test } from 'node:test';

import { buildFrame, frameTable } from '../src/frame';
import { parseRecords } from '../src/records';

const FIXTURES = path.join(__dirname, '..', '..', 'test', 'fixtures');

function load(name: string) {
  return parseRecords(fs.readFileSync(path.join(FIXTURES, name), 'utf8'));
}

test('groups the real sweep by width with one final loss per cell', () => {
  const curves = buildFrame(load('p8_sweep.csv'), 'width', 'train_loss');
  assert.equal(curves.length, 4);
  for (const curve of curves) {
    assert.equal(curve.points.length, 7);
    assert.ok(curve.optimum !== null);
    // records carry intermediate steps too; the frame must keep finals only
    const lrs = curve.points.map((p) => p.lr);
    assert.deepEqual(lrs, [...lrs].sort((a, b) => a - b));
  }
});

test('optimum of a monotone curve sits at the smallest learning rate', () => {
  const curves = buildFrame(load('monotone.csv'), 'width', 'train_loss');
  for (const curve of curves) {
    assert.equal(curve.optimum!.lr, 0.01);
  }
});

test('diverged cells become gaps and never win the optimum', () => {
  const curves = buildFrame(load('diverged.csv'), 'width', 'train_loss');
  assert.equal(curves.length, 1);
  const gap = curves[0].points.find((p) => p.lr === 1.0)!;
  assert.equal(gap.loss, null);
  assert.notEqual(curves[0].optimum!.lr, 1.0);
});

test('depth grouping works on the same records', () => {
  const curves = buildFrame(load('p8_sweep.csv'), 'depth', 'train_loss');
  assert.ok(curves.length >= 2);
});

test('frame table is deterministic and marks the optimum rows', () => {
  const records = load('diverged.csv');
  const a = frameTable(buildFrame(records, 'width', 'train_loss'), 'width', 'train_loss');
  const b = frameTable(buildFrame(records, 'width', 'train_loss'), 'width', 'train_loss');
  assert.equal(a, b);
  const rows = a.trim().split('\n');
  assert.equal(rows[0], 'width,lr,train_loss,optimum');
  assert.equal(rows.filter((r) => r.endsWith(',1')).length, 1);
  // the gap row keeps its place with an empty metric field
  assert.ok(rows.some((r) => r.includes(',,0')));
});
