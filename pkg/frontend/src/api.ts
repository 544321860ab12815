// Typed client for the control-service HTTP API. The UI never derives
// numbers itself: everything rendered comes straight from these payloads.

export interface RunSummaryRow {
  run_id: string;
  created_at: number; // microseconds since epoch
  status: string;
  finding_counts: Record<string, number>;
}

export interface RunStatusDto {
  run_id: string;
  phase: string;
  sequences_done: number;
  budget_sequences: number | null;
  progress: number | null;
  last_error: string | null;
}

export interface CoverageDto {
  total_operations: number;
  executed_operations: number;
  coverage: number;
}

export interface SummaryDto {
  coverage: CoverageDto;
  total_main_requests: number;
  total_responses: number;
  status_histogram: Record<string, number>;
  errors_from_bff: number;
  errors_per_backend: Record<string, number>;
}

export interface EvidenceDto {
  pattern_id: string;
  matched_excerpt: string;
  location: string; // "main-response" | "sub-response(<i>)"
}

export interface FindingItemDto {
  trace: string;
  statuses: number[];
  evidence: EvidenceDto[];
  requests: {
    role: string;
    method: string;
    uri: string;
    destination: string;
    status: number;
  }[];
  sequence: { id: string; cases: unknown[] } | null;
}

export interface ReportDto {
  run_id: string;
  sections: {
    summary: SummaryDto;
    error_counts: {
      errors_from_bff: number;
      errors_per_backend: Record<string, number>;
    };
    findings: {
      leak_both: FindingItemDto[];
      leak_main_only: FindingItemDto[];
      leak_sub_only: FindingItemDto[];
      server_error_5xx: FindingItemDto[];
    };
  };
}

export interface TrafficEventDto {
  ts: number;
  orig_host: string;
  orig_port: number;
  resp_host: string;
  resp_port: number;
  method: string;
  uri: string;
  status: number;
  req_headers?: Record<string, string>;
  resp_headers?: Record<string, string>;
  req_body?: string; // base64
  resp_body?: string; // base64
  req_body_truncated?: boolean;
  resp_body_truncated?: boolean;
  proxy_generated?: boolean;
}

export interface TraceEntryDto {
  entry_id: string;
  main: TrafficEventDto;
  subs: TrafficEventDto[];
  sequence_ref?: string;
  annotations?: string[];
}

export interface TraceMapDto {
  bff: string;
  entries: TraceEntryDto[];
  orphans: TrafficEventDto[];
  warnings?: string[];
}

export interface PayloadRef {
  trace: string;
  exchange: string; // "main" | "sub<i>"
  part: "request" | "response";
}

export interface GraphNodeDto {
  id: string;
  kind: "client" | "bff" | "backend";
  label: string; // host:port
}

export interface GraphEdgeDto {
  id: string;
  from: string;
  to: string;
  kind: "request" | "response";
  label: string; // host:port
  error_highlight: boolean;
  payload_ref?: PayloadRef;
}

export interface GraphModelDto {
  trace: string;
  nodes: GraphNodeDto[];
  edges: GraphEdgeDto[];
}

/** Error envelope the API returns: shown to the user verbatim. */
export class ApiError extends Error {
  constructor(
    readonly code: string,
    message: string,
    readonly status: number,
  ) {
    super(message);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const response = await fetch(url, init);
  if (!response.ok) {
    let code = `HTTP ${response.status}`;
    let message = response.statusText;
    try {
      const body = await response.json();
      if (body && typeof body.code === "string") code = body.code;
      if (body && typeof body.message === "string") message = body.message;
    } catch {
      // non-JSON error body: keep the status line
    }
    throw new ApiError(code, message, response.status);
  }
  return (await response.json()) as T;
}

export class ApiClient {
  constructor(readonly base: string = "") {}

  listRuns(): Promise<{ runs: RunSummaryRow[] }> {
    return request(`${this.base}/api/runs`);
  }

  startRun(config: unknown): Promise<{ run_id: string }> {
    return request(`${this.base}/api/runs`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(config),
    });
  }

  getStatus(runId: string): Promise<RunStatusDto> {
    return request(`${this.base}/api/runs/${encodeURIComponent(runId)}`);
  }

  getReport(runId: string): Promise<ReportDto> {
    return request(`${this.base}/api/runs/${encodeURIComponent(runId)}/report`);
  }

  getTraces(runId: string): Promise<TraceMapDto> {
    return request(`${this.base}/api/runs/${encodeURIComponent(runId)}/traces`);
  }

  getGraph(runId: string, traceId: string): Promise<GraphModelDto> {
    return request(
      `${this.base}/api/runs/${encodeURIComponent(runId)}/graph/${encodeURIComponent(traceId)}`,
    );
  }
}
