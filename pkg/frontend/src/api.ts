/** Thin typed client for the stylization service. */

export interface SessionInfo {
  id: string;
  nv: number;
  nf: number;
  bbox: { min: number[]; max: number[] };
  cubeness: number;
  validation: { ok: boolean; nonmanifold_edges: number[][]; [k: string]: unknown };
}

export interface JobParams {
  lambda: number;
  m?: number | null;
  controls?: Record<string, unknown>;
  constraints?: Record<string, unknown>;
  restart?: boolean;
}

export interface JobInfo {
  job_id: number;
  warm: boolean;
}

export interface IterationRecord {
  iter: number;
  rel_displacement: number;
  energy: number;
  cubeness: number;
  millis: number;
}

export interface ProgressResponse {
  status: "idle" | "running" | "converged" | "stopped" | "error";
  records: IterationRecord[];
}

export class ServiceError extends Error {
  constructor(readonly status: number, message: string, readonly payload?: unknown) {
    super(message);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ServiceClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async checked(url: string, init?: RequestInit): Promise<Response> {
    const response = await this.fetchFn(this.baseUrl + url, init);
    if (!response.ok) {
      let payload: unknown;
      let message = `${response.status}`;
      try {
        payload = await response.json();
        const err = (payload as { error?: string }).error;
        if (err) message = err;
      } catch {
        /* non-JSON error body */
      }
      throw new ServiceError(response.status, message, payload);
    }
    return response;
  }

  async upload(obj: string | Uint8Array): Promise<SessionInfo> {
    const body: BodyInit = typeof obj === "string" ? obj : new Blob([obj as BlobPart]);
    const response = await this.checked("/sessions", { method: "POST", body });
    return (await response.json()) as SessionInfo;
  }

  async setParams(sessionId: string, params: JobParams): Promise<JobInfo> {
    const body: Record<string, unknown> = { lambda: params.lambda };
    if (params.m != null) body.m = params.m;
    if (params.controls) body.controls = params.controls;
    if (params.constraints) body.constraints = params.constraints;
    if (params.restart) body.restart = true;
    const response = await this.checked(`/sessions/${sessionId}/job`, {
      method: "POST",
      body: JSON.stringify(body),
    });
    return (await response.json()) as JobInfo;
  }

  async progress(sessionId: string, since: number, timeoutSec = 10): Promise<ProgressResponse> {
    const response = await this.checked(
      `/sessions/${sessionId}/progress?since=${since}&timeout=${timeoutSec}`);
    return (await response.json()) as ProgressResponse;
  }

  async positions(sessionId: string): Promise<ArrayBuffer> {
    const response = await this.checked(`/sessions/${sessionId}/result?format=positions`);
    return await response.arrayBuffer();
  }

  async resultObj(sessionId: string): Promise<string> {
    const response = await this.checked(`/sessions/${sessionId}/result?format=obj`);
    return await response.text();
  }
}
