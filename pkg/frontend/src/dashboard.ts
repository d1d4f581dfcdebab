// Round-progress dashboard model. Numbers shown come verbatim from the API
// reports; no client-side rounding or recomputation is allowed to creep in.

import type { ProjectSummary, RoundReport, RoundStateDoc } from './types.js';

export interface ImageStatusRow {
  imageId: string;
  status: string;
}

export interface RoundSummaryRow {
  round: number;
  meanActiveSeconds: number | null;
  meanPixelsChanged: number | null;
  meanDice: number | null;
  converged: boolean | null;
}

export interface Dashboard {
  statusRows: ImageStatusRow[];
  roundRows: RoundSummaryRow[];
  diceTrend: number[]; // finalized rounds in order
}

export function buildDashboard(
  summary: ProjectSummary, currentRound: RoundStateDoc | null,
): Dashboard {
  const statusRows: ImageStatusRow[] = currentRound
    ? currentRound.image_ids.map((id) => ({ imageId: id, status: currentRound.status[id] }))
    : [];
  const roundRows: RoundSummaryRow[] = summary.rounds.map((r) => ({
    round: r.number,
    meanActiveSeconds: r.report ? r.report.mean_active_seconds : null,
    meanPixelsChanged: r.report ? r.report.mean_pixels_changed : null,
    meanDice: r.report ? r.report.mean_dice_proposal_vs_corrected : null,
    converged: r.report ? r.report.converged : null,
  }));
  const diceTrend = summary.rounds
    .filter((r) => r.finalized && r.report)
    .map((r) => (r.report as RoundReport).mean_dice_proposal_vs_corrected);
  return { statusRows, roundRows, diceTrend };
}

export function formatReportValue(v: number | boolean | null): string {
  // verbatim: callers render exactly what the API sent
  if (v === null) return '';
  return String(v);
}
