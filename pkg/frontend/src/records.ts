/**
 * Parser for the training-harness record files (CSV with an optional
 * `# key=value` config-echo header, or a JSON array with the same keys).
 */

export interface RunRecord {
  runId: string;
  width: number;
  depth: number;
  mass: number;
  lr: number;
  step: number;
  /** Infinity marks a diverged run. */
  trainLoss: number;
  testLoss: number | null;
  wallSeconds: number;
}

export const COLUMNS = [
  'run_id', 'width', 'depth', 'mass', 'lr', 'step', 'train_loss', 'test_loss', 'wall_seconds',
] as const;

function parseLoss(raw: string | number | null): number | null {
  if (raw === null || raw === '') return null;
  if (raw === 'inf') return Infinity;
  const v = Number(raw);
  if (Number.isNaN(v)) throw new Error(`unparseable loss value ${JSON.stringify(raw)}`);
  return v;
}

function fromRow(fields: Record<string, string | number | null>): RunRecord {
  const train = parseLoss(fields.train_loss as string);
  if (train === null) throw new Error('train_loss must be present on every record');
  return {
    runId: String(fields.run_id),
    width: Number(fields.width),
    depth: Number(fields.depth),
    mass: Number(fields.mass),
    lr: Number(fields.lr),
    step: Number(fields.step),
    trainLoss: train,
    testLoss: parseLoss(fields.test_loss as string),
    wallSeconds: Number(fields.wall_seconds),
  };
}

function parseCsv(text: string): RunRecord[] {
  const lines = text.split('\n').filter((ln) => ln.length > 0 && !ln.startsWith('#'));
  if (lines.length === 0) throw new Error('record file has no header row');
  const header = lines[0].split(',');
  const expected = COLUMNS.join(',');
  if (header.join(',') !== expected) {
    throw new Error(`unknown columns: got "${lines[0]}", expected "${expected}"`);
  }
  return lines.slice(1).map((ln) => {
    const parts = ln.split(',');
    if (parts.length !== COLUMNS.length) {
      throw new Error(`record row has ${parts.length} fields, expected ${COLUMNS.length}: ${ln}`);
    }
    const fields: Record<string, string> = {};
    COLUMNS.forEach((col, i) => (fields[col] = parts[i]));
    return fromRow(fields);
  });
}

function parseJson(text: string): RunRecord[] {
  const rows = JSON.parse(text);
  if (!Array.isArray(rows)) throw new Error('JSON records must be an array');
  return rows.map((row: Record<string, string | number | null>) => {
    for (const col of COLUMNS) {
      if (!(col in row)) throw new Error(`record object is missing column "${col}"`);
    }
    return fromRow(row);
  });
}

export function parseRecords(text: string): RunRecord[] {
  if (text.trim().length === 0) throw new Error('record file is empty');
  const records = text.trimStart().startsWith('[') ? parseJson(text) : parseCsv(text);
  if (records.length === 0) throw new Error('record file contains no rows');
  return records;
}
