// Resolving a graph edge's payload_ref into captured headers/body, and
// matching report evidence to an edge. Bodies arrive base64-encoded in the
// traces payload and are only fetched when the user expands an edge.

import type {
  EvidenceDto,
  PayloadRef,
  ReportDto,
  TraceMapDto,
  TrafficEventDto,
} from "./api.js";

export interface ResolvedPayload {
  headers?: Record<string, string>;
  body?: string;
  truncated: boolean;
}

export function findEvent(traces: TraceMapDto, ref: PayloadRef): TrafficEventDto | undefined {
  const entry = traces.entries.find((e) => e.entry_id === ref.trace);
  if (!entry) return undefined;
  if (ref.exchange === "main") return entry.main;
  const match = /^sub(\d+)$/.exec(ref.exchange);
  if (!match) return undefined;
  return entry.subs[Number(match[1])];
}

export function decodeBody(b64: string | undefined): string | undefined {
  if (b64 === undefined) return undefined;
  const raw = atob(b64);
  const bytes = new Uint8Array(raw.length);
  for (let i = 0; i < raw.length; i++) bytes[i] = raw.charCodeAt(i);
  return new TextDecoder("utf-8", { fatal: false }).decode(bytes);
}

export function resolvePayload(
  traces: TraceMapDto,
  ref: PayloadRef,
): ResolvedPayload | undefined {
  const event = findEvent(traces, ref);
  if (!event) return undefined;
  if (ref.part === "request") {
    return {
      headers: event.req_headers,
      body: decodeBody(event.req_body),
      truncated: Boolean(event.req_body_truncated),
    };
  }
  return {
    headers: event.resp_headers,
    body: decodeBody(event.resp_body),
    truncated: Boolean(event.resp_body_truncated),
  };
}

/** Evidence items from the report that sit on a given edge. */
export function evidenceForEdge(
  report: ReportDto,
  traceId: string,
  exchange: string,
  part: string,
): EvidenceDto[] {
  if (part !== "response") return []; // leak evidence lives on responses
  const location =
    exchange === "main" ? "main-response" : `sub-response(${exchange.slice(3)})`;
  const out: EvidenceDto[] = [];
  const groups = report.sections.findings;
  for (const items of [
    groups.leak_both,
    groups.leak_main_only,
    groups.leak_sub_only,
    groups.server_error_5xx,
  ]) {
    for (const item of items) {
      if (item.trace !== traceId) continue;
      for (const evidence of item.evidence) {
        if (evidence.location === location) out.push(evidence);
      }
    }
  }
  return out;
}
