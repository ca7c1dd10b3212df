/**
 * @fileoverview Wire types for the datapath HTTP API.
 *
 * Every interface here mirrors a JSON document the server emits or accepts.
 * The explorer never recomputes any of these values client side; it only
 * renders what the API hands back.
 */

/** [x, y] pair in canvas coordinates. */
export type Point = [number, number];

/** Which quantity a fill encodes. */
export type Encoding = 'activation_diff' | 'contribution';

export interface RectDoc {
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface PatternReport {
  version: number;
  diff_series: number[];
  n_l: number;
  r: number;
  detected: boolean;
  /** 1-based index of the layer where the series peaks. */
  max_layer: number;
}

/** Three polylines sharing x positions, one vertex per gated layer. */
export interface RiverDoc {
  version: number;
  source: Point[];
  adversarial: Point[];
  target: Point[];
  /** Conv layer id for each vertex column. */
  layers: number[];
  pattern_report: PatternReport | null;
}

export interface TreemapCell {
  /** Sorted role names whose datapaths share this region. */
  sets: string[];
  /** Feature map ids living in this region. */
  fms: number[];
  rect: RectDoc;
}

export interface TreemapDoc {
  version: number;
  canvas: RectDoc;
  cells: TreemapCell[];
  set_rects: { set: string; rect: RectDoc }[];
  parents: { region: string[]; parent: string }[];
  /** Conv layer id this layout was built for. */
  layer: number;
  objective: number;
}

export interface FillsDoc {
  layer: number;
  encoding: Encoding;
  /** Feature map id (as string key) to scalar value. */
  values: Record<string, number>;
}

export interface TensorDoc {
  shape: number[];
  data: number[];
  feature_map?: number;
  example_id?: string;
}

/** Run-length encoded boolean grid. Counts alternate gap/run, gap first. */
export interface MaskDoc {
  shape: number[];
  runs: number[];
}

export interface TripletDoc {
  source: string;
  adversarial: string;
  targets: string[];
  source_label: number | null;
  predicted_label: number | null;
}

export interface SessionDoc {
  version: number;
  id: string;
  model_id: string;
  triplet: TripletDoc;
  datapaths: { source: string | null; adversarial: string | null; targets: string[] };
  pattern_report: PatternReport | null;
  masks: Record<string, MaskDoc>;
  contributions: string[];
}

export type JobStatus = 'pending' | 'running' | 'done' | 'failed';

export interface JobDoc {
  version: number;
  id: string;
  kind: string;
  status: JobStatus;
  result: Record<string, unknown> | null;
  error: string | null;
}

export interface LayerGroup {
  name: string;
  first_layer: number;
  last_layer: number;
}

export interface ModelMeta {
  id: string;
  input_shape: number[];
  class_count: number;
  gate_count: number;
  layer_count: number;
  /** Conv layer ids that carry gates, in depth order. */
  gated_layers: number[];
  /** Conv layer id (string key) to its feature map ids. */
  layer_fms: Record<string, number[]>;
  layer_groups: LayerGroup[];
}

export interface ExtractionParamsDoc {
  l1_weight?: number;
  learning_rate?: number;
  iterations?: number;
  seed?: number;
  binarize_tau?: number;
  noise_scale?: number;
}

export interface ContributionRequest {
  model_id: string;
  example_ids: string[];
  target_fm: number;
  params: ExtractionParamsDoc;
  session_id?: string;
  mask?: MaskDoc;
}

/** Inclusive cell range brushed on an activation grid. */
export interface BrushRect {
  r0: number;
  c0: number;
  r1: number;
  c1: number;
}
