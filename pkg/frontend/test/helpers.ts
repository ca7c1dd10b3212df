import { readFileSync } from 'node:fs';
import { dirname, join } from 'node:path';
import { fileURLToPath } from 'node:url';
import type { FetchLike } from '../src/api.js';
import type {
  FillsDoc,
  JobStatus,
  MaskDoc,
  SessionDoc,
  TensorDoc,
} from '../src/types.js';

const here = dirname(fileURLToPath(import.meta.url));

/** Load a recorded document from test/golden. */
export function golden<T>(name: string): T {
  return JSON.parse(readFileSync(join(here, 'golden', `${name}.json`), 'utf8')) as T;
}

export interface GoldenMeta {
  session_id: string;
  model_id: string;
  source_id: string;
  adversarial_id: string;
  target_id: string;
  datapaths: { source: string; adversarial: string; target: string };
  brush_layer: number;
  brush_fm: number;
  earlier_layer: number;
  contribution_id: string;
}

export interface RecordedRequest {
  method: string;
  path: string;
  body: unknown;
}

export interface StubOptions {
  /** Make the contribution job end in "failed". */
  failJob?: boolean;
  /** Reject the mask PUT with an unknown feature map error. */
  maskError?: boolean;
}

export interface StubServer {
  fetch: FetchLike;
  requests: RecordedRequest[];
  meta: GoldenMeta;
}

function json(status: number, doc: unknown): Response {
  return new Response(JSON.stringify(doc), {
    status,
    headers: { 'content-type': 'application/json' },
  });
}

function errorDoc(code: string, message: string) {
  return { error: { code, message } };
}

function maskSelectedCount(mask: MaskDoc): number {
  let total = 0;
  for (let i = 1; i < mask.runs.length; i += 2) total += mask.runs[i]!;
  return total;
}

/**
 * In-memory double of the datapath server, scripted from the recorded
 * golden documents. It serves the same routes the real server exposes for
 * one session, walks a contribution job through pending, running and done,
 * and withholds contribution fills until the job has landed, exactly like
 * the real thing.
 */
export function makeStub(opts: StubOptions = {}): StubServer {
  const meta = golden<GoldenMeta>('meta');
  const session = structuredClone(golden<SessionDoc>('session'));
  // roll the session back to its pre-trace shape; the trace loop under
  // test is expected to restore the mask and the contribution
  session.masks = {};
  session.contributions = [];

  const jobId = 'job-0001';
  const script: JobStatus[] = opts.failJob
    ? ['pending', 'running', 'failed']
    : ['pending', 'running', 'done'];
  let jobPolls = 0;
  let jobPosted = false;
  let jobSettledDone = false;

  const requests: RecordedRequest[] = [];

  const zerosFills = (layerIndex: number, encoding: string): FillsDoc => ({
    // conv layer ids are not re-derived here; the tests only read layer 1
    layer: layerIndex,
    encoding: encoding as FillsDoc['encoding'],
    values: {},
  });

  const fetchImpl: FetchLike = async (input, init) => {
    const method = (init?.method ?? 'GET').toUpperCase();
    const body = init?.body ? JSON.parse(String(init.body)) : undefined;
    requests.push({ method, path: input, body });

    const [path, query = ''] = input.split('?') as [string, string?];
    const params = new URLSearchParams(query);
    const sid = meta.session_id;

    if (method === 'GET' && path === `/sessions/${sid}`) {
      return json(200, structuredClone(session));
    }
    if (method === 'GET' && path === `/models/${meta.model_id}`) {
      return json(200, golden('model_meta'));
    }
    if (method === 'GET' && path === `/sessions/${sid}/river`) {
      return json(200, golden('river'));
    }
    const treemap = path.match(new RegExp(`^/sessions/${sid}/layers/(\\d+)/treemap$`));
    if (method === 'GET' && treemap) {
      const layerIndex = Number(treemap[1]);
      if (layerIndex === meta.brush_layer) return json(200, golden('treemap_brush_layer'));
      if (layerIndex === meta.earlier_layer) return json(200, golden('treemap_earlier_layer'));
      return json(400, errorDoc('validation_error', `no recorded treemap for layer ${layerIndex}`));
    }
    const fills = path.match(new RegExp(`^/sessions/${sid}/layers/(\\d+)/feature-maps$`));
    if (method === 'GET' && fills) {
      const layerIndex = Number(fills[1]);
      const encoding = params.get('encoding') ?? 'activation_diff';
      if (encoding === 'activation_diff') {
        if (layerIndex === meta.brush_layer) return json(200, golden('fills_activation'));
        return json(200, zerosFills(layerIndex, encoding));
      }
      if (encoding === 'contribution') {
        if (!jobSettledDone) {
          return json(
            400,
            errorDoc('validation_error', `no contribution result covers layer ${layerIndex}`),
          );
        }
        if (layerIndex === meta.earlier_layer) return json(200, golden('fills_contribution'));
        return json(200, zerosFills(layerIndex, encoding));
      }
      return json(400, errorDoc('validation_error', 'encoding must be activation_diff or contribution'));
    }
    if (method === 'GET' && path === `/activations/${sid}/${meta.adversarial_id}/${meta.brush_fm}`) {
      return json(200, golden<TensorDoc>('activation_grid'));
    }
    const mask = path.match(new RegExp(`^/sessions/${sid}/masks/(\\d+)$`));
    if (method === 'PUT' && mask) {
      if (opts.maskError) {
        return json(404, errorDoc('unknown_id', `unknown feature map ${mask[1]}`));
      }
      const doc = body as MaskDoc;
      const selected = maskSelectedCount(doc);
      if (selected === 0) {
        return json(400, errorDoc('validation_error', 'empty selection'));
      }
      session.masks[String(mask[1])] = doc;
      return json(200, { feature_map: Number(mask[1]), selected });
    }
    if (method === 'POST' && path === '/jobs/contribution') {
      jobPosted = true;
      jobPolls = 0;
      return json(200, { job_id: jobId });
    }
    if (method === 'GET' && path === `/jobs/${jobId}`) {
      if (!jobPosted) return json(404, errorDoc('unknown_id', `no job ${jobId}`));
      const status = script[Math.min(jobPolls, script.length - 1)]!;
      jobPolls += 1;
      const doc = {
        version: 1,
        id: jobId,
        kind: 'contribution',
        status,
        result: status === 'done' ? { contribution_id: meta.contribution_id } : null,
        error: status === 'failed' ? 'synthetic kernel failure' : null,
      };
      if (status === 'done' && !jobSettledDone) {
        jobSettledDone = true;
        session.contributions.push(meta.contribution_id);
      }
      return json(200, doc);
    }
    return json(404, errorDoc('unknown_id', `no route for ${method} ${input}`));
  };

  return { fetch: fetchImpl, requests, meta };
}
