import type { ApiClient } from './api.js';
import type { JobDoc } from './types.js';

export interface PollOptions {
  /** Delay before the second status check. */
  baseMs?: number;
  /** Upper bound on the delay between checks. */
  maxMs?: number;
  /** Multiplier applied to the delay after every check. */
  factor?: number;
}

const wait = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

/**
 * Poll a job until it settles. Resolves with the job document once the
 * status is "done"; rejects with the server's error message on "failed".
 * The delay between checks backs off geometrically so a page with several
 * outstanding jobs does not hammer the server.
 */
export async function pollJob(
  api: ApiClient,
  jobId: string,
  opts: PollOptions = {},
): Promise<JobDoc> {
  const base = opts.baseMs ?? 250;
  const max = opts.maxMs ?? 4000;
  const factor = opts.factor ?? 2;
  let delay = base;
  for (;;) {
    const job = await api.getJob(jobId);
    if (job.status === 'done') return job;
    if (job.status === 'failed') {
      throw new Error(job.error ?? `job ${jobId} failed`);
    }
    await wait(delay);
    delay = Math.min(max, delay * factor);
  }
}
