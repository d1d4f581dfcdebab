// Client/server replay parity on the shared golden-log fixtures. The
// expected PNGs were produced by the server's replay; any pixel difference
// here means the two brush implementations have drifted.

import { readFileSync, readdirSync } from 'node:fs';
import { join } from 'node:path';
import { describe, expect, it } from 'vitest';

import { maskBitsFromPng } from '../src/png.js';
import { applyEvents, validateEvents } from '../src/replay.js';
import type { EditEvent } from '../src/types.js';

const FIXTURES = join(__dirname, 'fixtures');

function loadMask(name: string) {
  return maskBitsFromPng(new Uint8Array(readFileSync(join(FIXTURES, name))));
}

describe('golden-log replay parity', () => {
  const proposal = loadMask('proposal.png');
  const logs = readdirSync(FIXTURES).filter((f) => f.startsWith('log_')).sort();

  it('has fixtures to test against', () => {
    expect(logs.length).toBeGreaterThanOrEqual(10);
  });

  for (const logName of logs) {
    it(`replays ${logName} identically to the server`, () => {
      const doc = JSON.parse(readFileSync(join(FIXTURES, logName), 'utf8'));
      const events = doc.events as EditEvent[];
      const got = applyEvents(proposal.bits, proposal.width, proposal.height, events);
      const expected = loadMask(logName.replace('log_', 'expected_').replace('.json', '.png'));
      let diffs = 0;
      for (let i = 0; i < got.length; i++) {
        if (got[i] !== expected.bits[i]) diffs++;
      }
      expect(diffs).toBe(0);
    });
  }
});

describe('replay semantics', () => {
  it('radius-1 horizontal run paints exactly the run', () => {
    const bits = new Uint8Array(16 * 16);
    const out = applyEvents(bits, 16, 16, [
      { seq: 0, t_ms: 0, tool: 'add', radius_px: 1, path: [[3, 4], [7, 4]] },
    ]);
    let count = 0;
    for (let i = 0; i < out.length; i++) count += out[i];
    expect(count).toBe(5);
    for (let x = 3; x <= 7; x++) expect(out[4 * 16 + x]).toBe(1);
  });

  it('add then erase over the same path is the identity on empty masks', () => {
    const bits = new Uint8Array(32 * 32);
    const path: [number, number][] = [[5, 5], [20, 9]];
    const out = applyEvents(bits, 32, 32, [
      { seq: 0, t_ms: 0, tool: 'add', radius_px: 3, path },
      { seq: 1, t_ms: 10, tool: 'erase', radius_px: 3, path },
    ]);
    expect(out.every((v) => v === 0)).toBe(true);
  });

  it('rejects malformed logs like the server does', () => {
    expect(() => validateEvents(
      [{ seq: 0, t_ms: 0, tool: 'add', radius_px: 0.5, path: [[1, 1]] }], 8, 8,
    )).toThrow(/radius/);
    expect(() => validateEvents(
      [{ seq: 0, t_ms: 0, tool: 'add', radius_px: 1, path: [[9, 1]] }], 8, 8,
    )).toThrow(/out-of-bounds/);
    expect(() => validateEvents(
      [{ seq: 1, t_ms: 0, tool: 'add', radius_px: 1, path: [[1, 1]] },
       { seq: 1, t_ms: 5, tool: 'add', radius_px: 1, path: [[2, 2]] }], 8, 8,
    )).toThrow(/non-monotone/);
  });
});
