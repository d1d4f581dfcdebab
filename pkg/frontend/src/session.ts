// The annotation session: proposal + local event buffer + derived display.
// The client never rasterizes authoritatively; submissions ship the event
// log and the server verifies the final mask against its own replay, so the
// local stamping here must stay in lockstep with replay.ts (it reuses it).

import { applyEvents, stampEvent, validateEvents } from './replay.js';
import type { EditEvent } from './types.js';

export interface Brush {
  tool: 'add' | 'erase';
  radius: number;
}

export interface CanvasSession {
  imageId: string;
  revision: number;
  width: number;
  height: number;
  baseMode: 'raw' | 'enhanced';
  overlayVisible: boolean;
  overlayOpacity: number;
  brush: Brush;
  proposal: Uint8Array;        // replay base: proposal ∘ committed events
  committed: EditEvent[];      // events already on the server
  localEvents: EditEvent[];    // local buffer (undo pops whole events)
  redoStack: EditEvent[];
  display: Uint8Array;         // proposal ∘ committed ∘ localEvents
  clampedStrokes: number;      // strokes that contained out-of-canvas points
}

export function createSession(
  imageId: string, width: number, height: number,
  proposalBits: Uint8Array, priorEvents: EditEvent[], revision: number,
): CanvasSession {
  const display = applyEvents(proposalBits, width, height, priorEvents);
  return {
    imageId, revision, width, height,
    baseMode: 'raw',
    overlayVisible: true,
    overlayOpacity: 0.55,
    brush: { tool: 'add', radius: 3 },
    proposal: proposalBits.slice(),
    committed: priorEvents.slice(),
    localEvents: [],
    redoStack: [],
    display,
    clampedStrokes: 0,
  };
}

function nextSeq(session: CanvasSession): number {
  const all = [...session.committed, ...session.localEvents];
  return all.length ? all[all.length - 1].seq + 1 : 0;
}

export function paint(
  session: CanvasSession, trace: [number, number][], tMs: number,
): EditEvent {
  if (trace.length === 0) throw new Error('empty pointer trace');
  let clamped = false;
  const path = trace.map(([x, y]): [number, number] => {
    const cx = Math.min(session.width - 1, Math.max(0, x));
    const cy = Math.min(session.height - 1, Math.max(0, y));
    if (cx !== x || cy !== y) clamped = true;
    return [cx, cy];
  });
  if (clamped) session.clampedStrokes += 1;
  const event: EditEvent = {
    seq: nextSeq(session),
    t_ms: tMs,
    tool: session.brush.tool,
    radius_px: session.brush.radius,
    path,
  };
  validateEvents([event], session.width, session.height, event.seq - 1);
  session.localEvents.push(event);
  session.redoStack.length = 0;
  // incremental: stamping onto the current display equals a full replay
  stampEvent(session.display, session.width, session.height, event);
  return event;
}

function recompute(session: CanvasSession): void {
  session.display = applyEvents(
    session.proposal, session.width, session.height,
    [...session.committed, ...session.localEvents]);
}

export function undo(session: CanvasSession): boolean {
  const event = session.localEvents.pop();
  if (!event) return false;
  session.redoStack.push(event);
  recompute(session);
  return true;
}

export function redo(session: CanvasSession): boolean {
  const event = session.redoStack.pop();
  if (!event) return false;
  session.localEvents.push(event);
  stampEvent(session.display, session.width, session.height, event);
  return true;
}

export function setBaseMode(session: CanvasSession, mode: 'raw' | 'enhanced'): void {
  session.baseMode = mode; // base image swap only, overlay pixels untouched
}

export function markCommitted(session: CanvasSession, revision: number): void {
  session.committed.push(...session.localEvents);
  session.localEvents = [];
  session.redoStack.length = 0;
  session.revision = revision;
}

export function displayEquals(session: CanvasSession, bits: Uint8Array): boolean {
  if (bits.length !== session.display.length) return false;
  for (let i = 0; i < bits.length; i++) {
    if (bits[i] !== session.display[i]) return false;
  }
  return true;
}

export function pixelsChanged(session: CanvasSession): number {
  let n = 0;
  for (let i = 0; i < session.display.length; i++) {
    if (session.display[i] !== session.proposal[i]) n++;
  }
  return n;
}
