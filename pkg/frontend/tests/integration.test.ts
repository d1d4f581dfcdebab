// End-to-end round trip against the real Python server: load a proposal,
// paint two strokes, submit, finalize, and check the dashboard shows the
// report verbatim. The server-stored correction must equal the client's
// display export pixel for pixel.

import { spawn, spawnSync, ChildProcess } from 'node:child_process';
import { mkdtempSync, readFileSync, rmSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { AnnotationApi, StaleRevisionError } from '../src/api.js';
import { buildDashboard } from '../src/dashboard.js';
import { maskBitsFromPng, maskBitsToPng } from '../src/png.js';
import { createSession, markCommitted, paint } from '../src/session.js';

const PKG_ROOT = join(__dirname, '..', '..');
const PORT = 8931;
const BASE = `http://127.0.0.1:${PORT}`;

let serverProc: ChildProcess | null = null;
let projectDir = '';

async function waitForServer(timeoutMs = 30000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      const resp = await fetch(`${BASE}/api/project`);
      if (resp.ok) return;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) throw new Error('server did not come up');
    await new Promise((r) => setTimeout(r, 250));
  }
}

beforeAll(async () => {
  projectDir = mkdtempSync(join(tmpdir(), 'chorovessel-ui-'));
  const setup = spawnSync('python3',
    [join(PKG_ROOT, 'scripts', 'make_demo_project.py'),
     '--output', projectDir, '--images', '2', '--size', '128'],
    { cwd: PKG_ROOT, encoding: 'utf8' });
  if (setup.status !== 0) {
    throw new Error(`project setup failed: ${setup.stderr}`);
  }
  serverProc = spawn('python3',
    ['-m', 'chorovessel.cli', 'serve', '--project', projectDir,
     '--port', String(PORT)],
    { cwd: PKG_ROOT, stdio: 'ignore' });
  await waitForServer();
}, 60000);

afterAll(() => {
  serverProc?.kill();
  if (projectDir) rmSync(projectDir, { recursive: true, force: true });
});

describe('scripted browser-session round trip', () => {
  const api = new AnnotationApi(BASE);

  it('loads, paints two strokes, submits, and matches the stored mask', async () => {
    const log = await api.events('img00');
    expect(log.events.length).toBe(0);
    const proposalPng = await api.proposalPng('img00');
    const proposal = maskBitsFromPng(proposalPng);

    const session = createSession('img00', proposal.width, proposal.height,
                                  proposal.bits, log.events, log.revision);

    session.brush = { tool: 'add', radius: 3 };
    paint(session, [[20, 30], [60, 34], [90, 30]], 1000);
    session.brush = { tool: 'erase', radius: 2 };
    paint(session, [[40, 64], [70, 64]], 2600);
    expect(session.localEvents.length).toBe(2);

    const newRev = await api.postEvents('img00', session.localEvents,
                                        session.revision);
    markCommitted(session, newRev);

    const exportPng = maskBitsToPng(session.display, session.width, session.height);
    const b64 = Buffer.from(exportPng).toString('base64');
    const ack = await api.putCorrection('img00', b64, 1600, session.revision);
    expect(ack.server_active_ms).toBe(1600);

    // server-stored mask equals the client display export, pixel for pixel
    const storedPng = new Uint8Array(readFileSync(
      join(projectDir, 'rounds', '1', 'corrections', 'img00.png')));
    const stored = maskBitsFromPng(storedPng);
    const exported = maskBitsFromPng(exportPng);
    expect(stored.width).toBe(exported.width);
    expect(stored.height).toBe(exported.height);
    expect(Buffer.from(stored.bits).equals(Buffer.from(exported.bits))).toBe(true);

    const round = await api.round(1);
    expect(round.status['img00']).toBe('corrected');
  }, 30000);

  it('rejects a stale revision with 409', async () => {
    await expect(api.postEvents('img01',
      [{ seq: 0, t_ms: 0, tool: 'add', radius_px: 1, path: [[1, 1]] }],
      999)).rejects.toBeInstanceOf(StaleRevisionError);
  });

  it('accept-as-is stores the proposal verbatim', async () => {
    const proposalPng = await api.proposalPng('img01');
    const proposal = maskBitsFromPng(proposalPng);
    const log = await api.events('img01');
    const b64 = Buffer.from(maskBitsToPng(proposal.bits, proposal.width,
                                          proposal.height)).toString('base64');
    await api.putCorrection('img01', b64, 0, log.revision);
    const round = await api.round(1);
    expect(round.status['img01']).toBe('corrected');
  }, 30000);

  it('finalize report appears verbatim in the dashboard', async () => {
    const report = await api.finalizeRound(1);
    const summary = await api.project();
    const round = await api.round(1);
    const dash = buildDashboard(summary, round);

    const row = dash.roundRows.find((r) => r.round === 1)!;
    expect(row.meanDice).toBe(report.mean_dice_proposal_vs_corrected);
    expect(row.meanPixelsChanged).toBe(report.mean_pixels_changed);
    expect(row.meanActiveSeconds).toBe(report.mean_active_seconds);
    expect(row.converged).toBe(report.converged);
    expect(dash.diceTrend).toEqual([report.mean_dice_proposal_vs_corrected]);
    expect(dash.statusRows.every((r) => r.status === 'corrected')).toBe(true);

    const stored = await api.roundReport(1);
    expect(stored).toEqual(report);
  }, 60000);
});
