import type { BrushRect, Encoding, ModelMeta } from './types.js';

/**
 * The whole client state. Everything else on screen is a pure function of
 * this plus documents fetched from the server.
 */
export interface ViewState {
  sessionId: string;
  /** Index into the gated layer list, or null when nothing is selected. */
  layer: number | null;
  featureMap: number | null;
  encoding: Encoding;
  brushes: BrushRect[];
  pendingJobs: string[];
}

export function initialState(sessionId: string): ViewState {
  return {
    sessionId,
    layer: null,
    featureMap: null,
    encoding: 'activation_diff',
    brushes: [],
    pendingJobs: [],
  };
}

/** Changing layer invalidates the feature map and any brush on it. */
export function selectLayer(state: ViewState, layer: number): ViewState {
  if (state.layer === layer) return state;
  return { ...state, layer, featureMap: null, brushes: [] };
}

export function selectFeatureMap(state: ViewState, fm: number): ViewState {
  if (state.featureMap === fm) return state;
  return { ...state, featureMap: fm, brushes: [] };
}

export function setEncoding(state: ViewState, encoding: Encoding): ViewState {
  if (state.encoding === encoding) return state;
  return { ...state, encoding };
}

export function addBrush(state: ViewState, rect: BrushRect): ViewState {
  return { ...state, brushes: [...state.brushes, rect] };
}

export function clearBrushes(state: ViewState): ViewState {
  if (state.brushes.length === 0) return state;
  return { ...state, brushes: [] };
}

export function trackJob(state: ViewState, jobId: string): ViewState {
  return { ...state, pendingJobs: [...state.pendingJobs, jobId] };
}

export function untrackJob(state: ViewState, jobId: string): ViewState {
  return { ...state, pendingJobs: state.pendingJobs.filter((id) => id !== jobId) };
}

/**
 * Drop selections that no longer exist after a reload. The layer must be a
 * valid index into the model's gated layers and the feature map must belong
 * to that layer; anything stale falls back to unselected.
 */
export function reconcile(state: ViewState, meta: ModelMeta): ViewState {
  let next = state;
  if (next.layer !== null && (next.layer < 0 || next.layer >= meta.gated_layers.length)) {
    next = { ...next, layer: null, featureMap: null, brushes: [] };
  }
  if (next.layer !== null && next.featureMap !== null) {
    const conv = meta.gated_layers[next.layer]!;
    const fms = meta.layer_fms[String(conv)] ?? [];
    if (!fms.includes(next.featureMap)) {
      next = { ...next, featureMap: null, brushes: [] };
    }
  } else if (next.layer === null && next.featureMap !== null) {
    next = { ...next, featureMap: null, brushes: [] };
  }
  return next;
}
