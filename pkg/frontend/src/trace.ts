import { ApiClient, ApiError } from './api.js';
import { pollJob, type PollOptions } from './poll.js';
import { brushesToMask, maskSelected } from './grid.js';
import { setEncoding, trackJob, untrackJob, type ViewState } from './state.js';
import type { ExtractionParamsDoc, FillsDoc, SessionDoc } from './types.js';

/** Extraction settings sent with every contribution job the UI starts. */
export const TRACE_PARAMS: ExtractionParamsDoc = {
  l1_weight: 0.02,
  learning_rate: 0.05,
  iterations: 500,
  seed: 0,
};

export interface TraceCallbacks {
  /** The request was stopped client side before any network traffic. */
  onBlocked(message: string): void;
  /** A request or the job itself failed; message is shown inline. */
  onError(message: string): void;
  /** Fresh contribution fills for an earlier layer, ready to re-render. */
  onFills(layerIndex: number, fills: FillsDoc): void;
}

export interface TraceOutcome {
  state: ViewState;
  traced: boolean;
  contributionId: string | null;
}

/**
 * Run the brush-to-trace loop for the current selection: store the brushed
 * neuron mask, start a contribution job scoped to it, wait for the job, then
 * pull contribution fills for every layer before the brushed one so their
 * treemaps can re-render.
 *
 * An empty brush never reaches the server; the server would reject it with
 * a 400 anyway, but blocking locally keeps the round trip and the error
 * noise out of the common case.
 */
export async function traceContribution(
  api: ApiClient,
  state: ViewState,
  session: SessionDoc,
  gridShape: number[],
  cb: TraceCallbacks,
  pollOpts?: PollOptions,
): Promise<TraceOutcome> {
  if (state.layer === null || state.featureMap === null) {
    cb.onBlocked('select a layer and feature map before tracing');
    return { state, traced: false, contributionId: null };
  }
  const mask = brushesToMask(gridShape, state.brushes);
  if (maskSelected(mask) === 0) {
    cb.onBlocked('empty selection: brush at least one cell before tracing');
    return { state, traced: false, contributionId: null };
  }

  let tracked = state;
  let jobId: string | null = null;
  try {
    await api.putMask(session.id, state.featureMap, mask);
    const started = await api.postContribution({
      model_id: session.model_id,
      example_ids: [session.triplet.adversarial],
      target_fm: state.featureMap,
      params: TRACE_PARAMS,
      session_id: session.id,
    });
    jobId = started.job_id;
    tracked = trackJob(state, jobId);

    const job = await pollJob(api, jobId, pollOpts);

    for (let li = 0; li < state.layer; li++) {
      cb.onFills(li, await api.getFills(session.id, li, 'contribution'));
    }
    const result = job.result as { contribution_id?: string } | null;
    return {
      state: setEncoding(untrackJob(tracked, jobId), 'contribution'),
      traced: true,
      contributionId: result?.contribution_id ?? null,
    };
  } catch (err) {
    const message = err instanceof ApiError || err instanceof Error ? err.message : String(err);
    cb.onError(message);
    return {
      state: jobId === null ? state : untrackJob(tracked, jobId),
      traced: false,
      contributionId: null,
    };
  }
}
