/** DOM-free steering logic: debounced parameter edits, a single long-poll
 *  loop, and position buffers pulled from the service verbatim.
 *
 *  Invariants this class maintains (and the tests assert):
 *    - at most one set_params request is ever in flight; scrubbing the
 *      slider collapses into the trailing edit (150 ms debounce) and any
 *      edit arriving while a request runs is queued, replacing older ones;
 *    - displayed stylized geometry is exactly the bytes of the last
 *      /result?format=positions response (no local mutation);
 *    - the iteration trace is sorted by iteration index.
 */
import { Debouncer } from "./debounce.js";
import { parseCpos } from "./cpos.js";
import {
  FetchLike, IterationRecord, JobParams, ServiceClient, SessionInfo,
} from "./api.js";

export type DisplayMode = "original" | "stylized" | "split";
export type Status = "idle" | "running" | "converged" | "stopped" | "error";

export interface ViewState {
  sessionId: string | null;
  lambda: number;
  coarseFaces: number | null;
  mode: DisplayMode;
  status: Status;
  trace: IterationRecord[];
  stylizedPositions: Float32Array | null;
  lastPositionsBytes: ArrayBuffer | null;
  warm: boolean | null;
}

export interface ControllerEvents {
  onStatus?: (status: Status) => void;
  onTrace?: (records: IterationRecord[]) => void;
  onPositions?: (positions: Float32Array) => void;
  onError?: (error: Error) => void;
}

export class SteeringController {
  readonly client: ServiceClient;
  readonly state: ViewState = {
    sessionId: null,
    lambda: 0,
    coarseFaces: null,
    mode: "stylized",
    status: "idle",
    trace: [],
    stylizedPositions: null,
    lastPositionsBytes: null,
    warm: null,
  };
  session: SessionInfo | null = null;

  /** instrumentation for the scrubbing guarantee */
  inFlightJobs = 0;
  maxInFlightJobs = 0;
  jobsSubmitted = 0;
  convergedCount = 0;

  private debouncer: Debouncer<JobParams>;
  private queued: JobParams | null = null;
  private submitting = false;
  private polling = false;
  private pollGeneration = 0;
  private since = 0;
  private disposed = false;

  constructor(baseUrl: string, fetchFn?: FetchLike, debounceMs = 150,
              private readonly events: ControllerEvents = {}) {
    this.client = new ServiceClient(baseUrl, fetchFn);
    this.debouncer = new Debouncer<JobParams>(debounceMs, (p) => {
      void this.submit(p);
    });
  }

  async upload(obj: string | Uint8Array): Promise<SessionInfo> {
    const info = await this.client.upload(obj);
    this.session = info;
    this.state.sessionId = info.id;
    this.state.status = "idle";
    this.state.trace = [];
    this.since = 0;
    return info;
  }

  /** Debounced cubeness edit; the solver job fires after 150 ms of quiet. */
  setLambda(lambda: number): void {
    this.state.lambda = lambda;
    this.requestSolve();
  }

  /** Debounced coarse-budget edit (null = solve at full resolution). */
  setCoarseFaces(m: number | null): void {
    this.state.coarseFaces = m;
    this.requestSolve();
  }

  setDisplayMode(mode: DisplayMode): void {
    this.state.mode = mode;   // pure client state; survives lambda edits
  }

  private requestSolve(): void {
    this.debouncer.call({
      lambda: this.state.lambda,
      m: this.state.coarseFaces,
    });
  }

  /** Test hook: bypass the debounce delay. */
  flushPending(): void {
    this.debouncer.flush();
  }

  private async submit(params: JobParams): Promise<void> {
    if (this.disposed || !this.state.sessionId) return;
    if (this.submitting) {
      this.queued = params;   // newest edit wins
      return;
    }
    this.submitting = true;
    this.inFlightJobs += 1;
    this.maxInFlightJobs = Math.max(this.maxInFlightJobs, this.inFlightJobs);
    try {
      const job = await this.client.setParams(this.state.sessionId, params);
      this.jobsSubmitted += 1;
      this.state.warm = job.warm;
      this.state.status = "running";
      this.events.onStatus?.("running");
      this.ensurePolling();
    } catch (error) {
      this.events.onError?.(error as Error);
    } finally {
      this.inFlightJobs -= 1;
      this.submitting = false;
    }
    if (this.queued) {
      const next = this.queued;
      this.queued = null;
      await this.submit(next);
    }
  }

  private ensurePolling(): void {
    if (!this.polling) {
      this.polling = true;
      const generation = ++this.pollGeneration;
      void this.pollLoop(generation);
    }
  }

  private async pollLoop(generation: number): Promise<void> {
    try {
      while (!this.disposed && generation === this.pollGeneration) {
        const sessionId = this.state.sessionId;
        if (!sessionId) break;
        const progress = await this.client.progress(sessionId, this.since);
        if (progress.records.length > 0) {
          this.state.trace.push(...progress.records);
          this.since = progress.records[progress.records.length - 1].iter;
          this.events.onTrace?.(progress.records);
          await this.refreshPositions(sessionId);
        }
        const status = progress.status as Status;
        if (status !== this.state.status) {
          this.state.status = status;
          if (status === "converged") this.convergedCount += 1;
          this.events.onStatus?.(status);
        }
        if (status !== "running" && progress.records.length === 0) {
          break;  // terminal and drained
        }
      }
    } catch (error) {
      this.events.onError?.(error as Error);
    } finally {
      if (generation === this.pollGeneration) this.polling = false;
    }
  }

  private async refreshPositions(sessionId: string): Promise<void> {
    const bytes = await this.client.positions(sessionId);
    this.state.lastPositionsBytes = bytes;
    this.state.stylizedPositions = parseCpos(bytes);
    this.events.onPositions?.(this.state.stylizedPositions);
  }

  /** True while an edit is pending, in flight, or being polled. */
  get busy(): boolean {
    return this.debouncer.hasPending() || this.submitting || this.queued !== null
      || this.polling || this.state.status === "running";
  }

  /** Wait until the session reports a terminal status (test/e2e helper). */
  async waitForTerminal(timeoutMs = 120_000): Promise<Status> {
    const deadline = Date.now() + timeoutMs;
    while (Date.now() < deadline) {
      if (!this.busy) {
        return this.state.status;
      }
      await new Promise((resolve) => setTimeout(resolve, 25));
    }
    throw new Error(`still ${this.state.status} after ${timeoutMs} ms`);
  }

  dispose(): void {
    this.disposed = true;
    this.debouncer.cancel();
    this.pollGeneration += 1;
  }
}
