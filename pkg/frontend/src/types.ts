// Wire types for the hitl/1 annotation API.

export interface EditEvent {
  seq: number;
  t_ms: number;
  tool: 'add' | 'erase';
  radius_px: number;
  path: [number, number][];
}

export interface RoundReport {
  round: number;
  n_images: number;
  mean_dice_proposal_vs_corrected: number;
  mean_active_seconds: number;
  mean_pixels_changed: number;
  converged: boolean;
}

export interface RoundStateDoc {
  schema: string;
  number: number;
  image_ids: string[];
  status: Record<string, 'proposed' | 'in_progress' | 'corrected'>;
  fitted_params: Record<string, unknown> | null;
  report: RoundReport | null;
  finalized: boolean;
  revisions: Record<string, number>;
}

export interface ProjectSummary {
  schema: string;
  id: string;
  images: { id: string; path: string; cohort: string; view: string }[];
  rounds: { number: number; n_images: number; finalized: boolean; report: RoundReport | null }[];
  revisions: Record<string, number>;
}

export interface EventLogDoc {
  schema: string;
  image_id: string;
  events: EditEvent[];
  client_active_ms: number | null;
  server_active_ms: number | null;
  revision: number;
}

export const BRUSH_RADII = [1, 2, 3, 5, 8] as const;
