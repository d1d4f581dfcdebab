// Typed client for the hitl/1 HTTP API; the only backend surface the
// annotator talks to.

import type { EditEvent, EventLogDoc, ProjectSummary, RoundReport, RoundStateDoc } from './types.js';

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class StaleRevisionError extends ApiError {
  constructor(message: string) {
    super(409, message);
  }
}

async function checkJson<T>(resp: Response): Promise<T> {
  if (resp.status === 409) {
    throw new StaleRevisionError(await resp.text());
  }
  if (!resp.ok) {
    throw new ApiError(resp.status, await resp.text());
  }
  return resp.json() as Promise<T>;
}

export class AnnotationApi {
  constructor(private baseUrl: string) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, '') + path;
  }

  async project(): Promise<ProjectSummary> {
    return checkJson(await fetch(this.url('/api/project')));
  }

  async round(n: number): Promise<RoundStateDoc> {
    return checkJson(await fetch(this.url(`/api/rounds/${n}`)));
  }

  async roundReport(n: number): Promise<RoundReport> {
    const doc = await checkJson<{ report: RoundReport }>(
      await fetch(this.url(`/api/rounds/${n}/report`)));
    return doc.report;
  }

  async finalizeRound(n: number): Promise<RoundReport> {
    const doc = await checkJson<{ report: RoundReport }>(
      await fetch(this.url(`/api/rounds/${n}/finalize`), { method: 'POST' }));
    return doc.report;
  }

  async basePng(imageId: string, mode: 'raw' | 'enhanced'): Promise<Uint8Array> {
    const resp = await fetch(this.url(`/api/images/${imageId}/base?mode=${mode}`));
    if (!resp.ok) throw new ApiError(resp.status, await resp.text());
    return new Uint8Array(await resp.arrayBuffer());
  }

  async proposalPng(imageId: string): Promise<Uint8Array> {
    const resp = await fetch(this.url(`/api/images/${imageId}/proposal`));
    if (!resp.ok) throw new ApiError(resp.status, await resp.text());
    return new Uint8Array(await resp.arrayBuffer());
  }

  async events(imageId: string): Promise<EventLogDoc> {
    return checkJson(await fetch(this.url(`/api/images/${imageId}/events`)));
  }

  async postEvents(imageId: string, events: EditEvent[], revision: number): Promise<number> {
    const doc = await checkJson<{ revision: number }>(
      await fetch(this.url(`/api/images/${imageId}/events`), {
        method: 'POST',
        headers: { 'Content-Type': 'application/json' },
        body: JSON.stringify({ events, revision }),
      }));
    return doc.revision;
  }

  async putCorrection(
    imageId: string, maskPngBase64: string, activeMs: number, revision: number,
  ): Promise<{ server_active_ms: number; revision: number }> {
    return checkJson(await fetch(this.url(`/api/images/${imageId}/correction`), {
      method: 'PUT',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({
        final_mask_png_base64: maskPngBase64,
        active_ms: activeMs,
        revision,
      }),
    }));
  }
}
