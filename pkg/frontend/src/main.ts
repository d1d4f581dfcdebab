// Browser shell: canvas layers, brush handling, submit flow, dashboard.
// All mask logic lives in session.ts/replay.ts; this file only wires DOM.
// PNG decode/encode in the browser goes through canvas, not png.ts.

import { AnnotationApi, StaleRevisionError } from './api.js';
import { buildDashboard, formatReportValue } from './dashboard.js';
import { createSession, CanvasSession, paint, pixelsChanged, setBaseMode, undo, markCommitted } from './session.js';
import { BRUSH_RADII, EditEvent } from './types.js';

const api = new AnnotationApi('');

let session: CanvasSession | null = null;
let basePngs: { raw: ImageBitmap; enhanced: ImageBitmap } | null = null;
let strokeStart = 0;
let activeTrace: [number, number][] = [];

const canvas = document.getElementById('view') as HTMLCanvasElement;
const ctx = canvas.getContext('2d')!;
const statusEl = document.getElementById('status')!;
const dashEl = document.getElementById('dashboard')!;

async function pngToBitmap(data: Uint8Array): Promise<ImageBitmap> {
  const copy = new Uint8Array(data).buffer as ArrayBuffer;
  return createImageBitmap(new Blob([copy], { type: 'image/png' }));
}

async function pngToBits(data: Uint8Array): Promise<{ w: number; h: number; bits: Uint8Array }> {
  const bmp = await pngToBitmap(data);
  const off = new OffscreenCanvas(bmp.width, bmp.height);
  const octx = off.getContext('2d')!;
  octx.drawImage(bmp, 0, 0);
  const img = octx.getImageData(0, 0, bmp.width, bmp.height);
  const bits = new Uint8Array(bmp.width * bmp.height);
  for (let i = 0; i < bits.length; i++) bits[i] = img.data[i * 4] === 255 ? 1 : 0;
  return { w: bmp.width, h: bmp.height, bits };
}

async function exportDisplayPngBase64(s: CanvasSession): Promise<string> {
  const off = new OffscreenCanvas(s.width, s.height);
  const octx = off.getContext('2d')!;
  const img = octx.createImageData(s.width, s.height);
  for (let i = 0; i < s.display.length; i++) {
    const v = s.display[i] ? 255 : 0;
    img.data[i * 4] = v;
    img.data[i * 4 + 1] = v;
    img.data[i * 4 + 2] = v;
    img.data[i * 4 + 3] = 255;
  }
  octx.putImageData(img, 0, 0);
  const blob = await off.convertToBlob({ type: 'image/png' });
  const buf = new Uint8Array(await blob.arrayBuffer());
  let bin = '';
  for (const b of buf) bin += String.fromCharCode(b);
  return btoa(bin);
}

function draw(): void {
  if (!session || !basePngs) return;
  canvas.width = session.width;
  canvas.height = session.height;
  ctx.drawImage(basePngs[session.baseMode], 0, 0);
  if (!session.overlayVisible) return;
  const overlay = ctx.getImageData(0, 0, session.width, session.height);
  const a = session.overlayOpacity;
  for (let i = 0; i < session.display.length; i++) {
    if (session.display[i]) {
      overlay.data[i * 4] = Math.round((1 - a) * overlay.data[i * 4] + a * 255);
      overlay.data[i * 4 + 1] = Math.round((1 - a) * overlay.data[i * 4 + 1]);
      overlay.data[i * 4 + 2] = Math.round((1 - a) * overlay.data[i * 4 + 2] + a * 80);
    }
  }
  ctx.putImageData(overlay, 0, 0);
}

export async function loadImage(imageId: string): Promise<void> {
  try {
    const [rawPng, enhPng, propPng, log] = await Promise.all([
      api.basePng(imageId, 'raw'),
      api.basePng(imageId, 'enhanced'),
      api.proposalPng(imageId),
      api.events(imageId),
    ]);
    const prop = await pngToBits(propPng);
    basePngs = {
      raw: await pngToBitmap(rawPng),
      enhanced: await pngToBitmap(enhPng),
    };
    session = createSession(imageId, prop.w, prop.h, prop.bits,
                            log.events as EditEvent[], log.revision);
    statusEl.textContent = `${imageId} loaded (revision ${log.revision})`;
    draw();
  } catch (err) {
    statusEl.textContent = `load failed: ${(err as Error).message}`;
  }
}

export async function submit(acceptAsIs: boolean): Promise<void> {
  if (!session) return;
  try {
    if (session.localEvents.length > 0) {
      const rev = await api.postEvents(session.imageId, session.localEvents,
                                       session.revision);
      markCommitted(session, rev);
    } else if (!acceptAsIs) {
      statusEl.textContent = 'nothing to submit; use accept-as-is to confirm the proposal';
      return;
    }
    const activeMs = Date.now() - strokeStart;
    await api.putCorrection(session.imageId, await exportDisplayPngBase64(session),
                            activeMs, session.revision);
    statusEl.textContent = `${session.imageId} submitted`;
    await refreshDashboard();
  } catch (err) {
    if (err instanceof StaleRevisionError) {
      statusEl.textContent = 'stale revision: reload the image to merge (409)';
    } else {
      statusEl.textContent = `submit failed: ${(err as Error).message}`;
    }
  }
}

export async function refreshDashboard(): Promise<void> {
  const summary = await api.project();
  const latest = summary.rounds.length
    ? await api.round(summary.rounds[summary.rounds.length - 1].number) : null;
  const dash = buildDashboard(summary, latest);
  const rows = dash.statusRows
    .map((r) => `<tr><td>${r.imageId}</td><td>${r.status}</td></tr>`).join('');
  const rounds = dash.roundRows.map((r) =>
    `<tr><td>${r.round}</td><td>${formatReportValue(r.meanDice)}</td>` +
    `<td>${formatReportValue(r.meanPixelsChanged)}</td>` +
    `<td>${formatReportValue(r.meanActiveSeconds)}</td></tr>`).join('');
  dashEl.innerHTML =
    `<h3>Images</h3><table>${rows}</table>` +
    `<h3>Rounds</h3><table><tr><th>#</th><th>dice</th><th>px changed</th>` +
    `<th>active s</th></tr>${rounds}</table>` +
    `<p>Dice trend: ${dash.diceTrend.map(formatReportValue).join(' → ')}</p>`;
}

function canvasPoint(evt: PointerEvent): [number, number] {
  const rect = canvas.getBoundingClientRect();
  return [
    (evt.clientX - rect.left) * (canvas.width / rect.width),
    (evt.clientY - rect.top) * (canvas.height / rect.height),
  ];
}

function wireUi(): void {
  canvas.addEventListener('pointerdown', (evt) => {
    if (!session) return;
    activeTrace = [canvasPoint(evt)];
    if (!strokeStart) strokeStart = Date.now();
    canvas.setPointerCapture(evt.pointerId);
  });
  canvas.addEventListener('pointermove', (evt) => {
    if (!session || activeTrace.length === 0) return;
    activeTrace.push(canvasPoint(evt));
  });
  canvas.addEventListener('pointerup', () => {
    if (!session || activeTrace.length === 0) return;
    paint(session, activeTrace, Date.now());
    activeTrace = [];
    draw();
  });

  (document.getElementById('undo') as HTMLButtonElement).onclick = () => {
    if (session && undo(session)) draw();
  };
  (document.getElementById('tool') as HTMLSelectElement).onchange = (e) => {
    if (session) session.brush.tool = (e.target as HTMLSelectElement).value as 'add' | 'erase';
  };
  const radiusSel = document.getElementById('radius') as HTMLSelectElement;
  for (const r of BRUSH_RADII) {
    const opt = document.createElement('option');
    opt.value = String(r);
    opt.textContent = `${r} px`;
    radiusSel.appendChild(opt);
  }
  radiusSel.value = '3';
  radiusSel.onchange = () => {
    if (session) session.brush.radius = Number(radiusSel.value);
  };
  (document.getElementById('mode') as HTMLSelectElement).onchange = (e) => {
    if (!session) return;
    setBaseMode(session, (e.target as HTMLSelectElement).value as 'raw' | 'enhanced');
    draw();
  };
  (document.getElementById('opacity') as HTMLInputElement).oninput = (e) => {
    if (!session) return;
    session.overlayOpacity = Number((e.target as HTMLInputElement).value);
    draw();
  };
  (document.getElementById('overlay') as HTMLInputElement).onchange = (e) => {
    if (!session) return;
    session.overlayVisible = (e.target as HTMLInputElement).checked;
    draw();
  };
  (document.getElementById('submit') as HTMLButtonElement).onclick = () => submit(false);
  (document.getElementById('accept') as HTMLButtonElement).onclick = () => submit(true);
  (document.getElementById('load') as HTMLButtonElement).onclick = () => {
    const id = (document.getElementById('image-id') as HTMLInputElement).value;
    if (id) void loadImage(id);
  };
  const pxEl = document.getElementById('pixels-changed');
  if (pxEl) {
    setInterval(() => {
      if (session) pxEl.textContent = String(pixelsChanged(session));
    }, 1000);
  }
}

if (typeof document !== 'undefined' && document.getElementById('view')) {
  wireUi();
  void refreshDashboard();
}
