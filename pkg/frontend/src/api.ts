import type {
  ContributionRequest,
  Encoding,
  FillsDoc,
  JobDoc,
  MaskDoc,
  ModelMeta,
  RiverDoc,
  SessionDoc,
  TensorDoc,
  TreemapDoc,
} from './types.js';

/** Error payloads come back as {"error": {"code": ..., "message": ...}}. */
export class ApiError extends Error {
  readonly status: number;
  readonly code: string;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.name = 'ApiError';
    this.status = status;
    this.code = code;
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/**
 * Thin client over the datapath server. The fetch implementation is
 * injectable so tests can run against a scripted stub.
 */
export class ApiClient {
  private readonly base: string;
  private readonly fetchFn: FetchLike;

  constructor(baseUrl: string, fetchFn?: FetchLike) {
    this.base = baseUrl.replace(/\/+$/, '');
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { 'content-type': 'application/json' };
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchFn(this.base + path, init);
    let payload: unknown = null;
    try {
      payload = await resp.json();
    } catch {
      // non-JSON body, fall through to the status check
    }
    if (!resp.ok) {
      const err = (payload as { error?: { code?: string; message?: string } } | null)?.error;
      throw new ApiError(
        resp.status,
        err?.code ?? 'error',
        err?.message ?? `${method} ${path} failed with status ${resp.status}`,
      );
    }
    return payload as T;
  }

  getModel(modelId: string): Promise<ModelMeta> {
    return this.request('GET', `/models/${modelId}`);
  }

  getSession(sessionId: string): Promise<SessionDoc> {
    return this.request('GET', `/sessions/${sessionId}`);
  }

  getJob(jobId: string): Promise<JobDoc> {
    return this.request('GET', `/jobs/${jobId}`);
  }

  getRiver(sessionId: string, width = 960, height = 320, scale = 1): Promise<RiverDoc> {
    return this.request(
      'GET',
      `/sessions/${sessionId}/river?width=${width}&height=${height}&scale=${scale}`,
    );
  }

  /** layer is the index into the gated layer list, not the conv layer id. */
  getTreemap(sessionId: string, layer: number, width = 600, height = 400): Promise<TreemapDoc> {
    return this.request(
      'GET',
      `/sessions/${sessionId}/layers/${layer}/treemap?width=${width}&height=${height}`,
    );
  }

  getFills(sessionId: string, layer: number, encoding: Encoding): Promise<FillsDoc> {
    return this.request(
      'GET',
      `/sessions/${sessionId}/layers/${layer}/feature-maps?encoding=${encoding}`,
    );
  }

  getActivation(sessionId: string, exampleId: string, fm: number): Promise<TensorDoc> {
    return this.request('GET', `/activations/${sessionId}/${exampleId}/${fm}`);
  }

  putMask(
    sessionId: string,
    fm: number,
    mask: MaskDoc,
  ): Promise<{ feature_map: number; selected: number }> {
    return this.request('PUT', `/sessions/${sessionId}/masks/${fm}`, mask);
  }

  postContribution(payload: ContributionRequest): Promise<{ job_id: string }> {
    return this.request('POST', '/jobs/contribution', payload);
  }
}
