// Edit-log replay. This must mirror the server's brush semantics exactly:
// a pixel center is painted iff it lies strictly within radius_px of the
// stroke polyline (squared-distance compare in float64, same operation
// order), so client and server replays of one log are bit-identical.

import type { EditEvent } from './types.js';

function stampSegment(
  bits: Uint8Array, width: number, height: number,
  ax: number, ay: number, bx: number, by: number,
  radius: number, value: number,
): void {
  const r2 = radius * radius;
  const x0 = Math.max(0, Math.floor(Math.min(ax, bx) - radius));
  const x1 = Math.min(width - 1, Math.ceil(Math.max(ax, bx) + radius));
  const y0 = Math.max(0, Math.floor(Math.min(ay, by) - radius));
  const y1 = Math.min(height - 1, Math.ceil(Math.max(ay, by) + radius));
  if (x1 < x0 || y1 < y0) return;
  const abx = bx - ax;
  const aby = by - ay;
  const denom = abx * abx + aby * aby;
  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      let t = 0;
      if (denom > 0) {
        t = ((x - ax) * abx + (y - ay) * aby) / denom;
        t = Math.min(1, Math.max(0, t));
      }
      const cx = ax + t * abx;
      const cy = ay + t * aby;
      const dx = x - cx;
      const dy = y - cy;
      if (dx * dx + dy * dy < r2) {
        bits[y * width + x] = value;
      }
    }
  }
}

export function stampEvent(
  bits: Uint8Array, width: number, height: number, event: EditEvent,
): void {
  const value = event.tool === 'add' ? 1 : 0;
  const path = event.path;
  if (path.length === 1) {
    const [x, y] = path[0];
    stampSegment(bits, width, height, x, y, x, y, event.radius_px, value);
    return;
  }
  for (let k = 0; k + 1 < path.length; k++) {
    const [ax, ay] = path[k];
    const [bx, by] = path[k + 1];
    stampSegment(bits, width, height, ax, ay, bx, by, event.radius_px, value);
  }
}

export function validateEvents(
  events: EditEvent[], width: number, height: number, prevSeq = -1,
): void {
  let last = prevSeq;
  for (const e of events) {
    if (e.tool !== 'add' && e.tool !== 'erase') throw new Error(`unknown tool ${e.tool}`);
    if (e.radius_px < 1) throw new Error('radius must be >= 1 px');
    if (e.path.length === 0) throw new Error('empty stroke path');
    if (e.seq <= last) throw new Error(`non-monotone seq ${e.seq} after ${last}`);
    last = e.seq;
    for (const [x, y] of e.path) {
      if (!(x >= 0 && x <= width - 1 && y >= 0 && y <= height - 1)) {
        throw new Error(`out-of-bounds stroke point (${x}, ${y})`);
      }
    }
  }
}

export function applyEvents(
  proposal: Uint8Array, width: number, height: number, events: EditEvent[],
): Uint8Array {
  validateEvents(events, width, height);
  const bits = proposal.slice();
  for (const e of events) stampEvent(bits, width, height, e);
  return bits;
}
