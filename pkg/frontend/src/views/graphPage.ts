// Per-trace graph explorer: renders the SVG scene and, for each expanded
// edge, a panel with captured headers/body plus any leak evidence on that
// edge. Payloads are fetched lazily (first expansion pulls the trace map).

import { ApiClient, ApiError, GraphEdgeDto, ReportDto, TraceMapDto } from "../api.js";
import { GraphView, renderGraph, toggleEdge } from "../graph.js";
import { evidenceForEdge, resolvePayload } from "../payload.js";

export class GraphPage {
  private view: GraphView | null = null;
  private report: ReportDto | null = null;
  private traces: TraceMapDto | null = null;
  private tracesPromise: Promise<TraceMapDto> | null = null;

  constructor(
    private readonly client: ApiClient,
    private readonly runId: string,
    private readonly traceId: string,
    private readonly root: HTMLElement,
  ) {}

  async load(): Promise<void> {
    this.root.innerHTML = "<p class='muted'>loading graph…</p>";
    try {
      const [graph, report] = await Promise.all([
        this.client.getGraph(this.runId, this.traceId),
        this.client.getReport(this.runId),
      ]);
      this.view = { graph, expanded_edges: new Set(), selected_trace: this.traceId };
      this.report = report;
    } catch (err) {
      this.root.innerHTML = "";
      this.root.appendChild(errorBox(err));
      return;
    }
    this.render();
  }

  private async ensureTraces(): Promise<TraceMapDto> {
    if (this.traces) return this.traces;
    if (!this.tracesPromise) this.tracesPromise = this.client.getTraces(this.runId);
    this.traces = await this.tracesPromise;
    return this.traces;
  }

  private async onEdgeClick(edge: GraphEdgeDto): Promise<void> {
    if (!this.view) return;
    toggleEdge(this.view, edge.id);
    if (this.view.expanded_edges.has(edge.id) && edge.payload_ref) {
      await this.ensureTraces(); // bodies are fetched on expand, not before
    }
    this.render();
  }

  render(): void {
    if (!this.view) return;
    this.root.innerHTML = "";
    const heading = document.createElement("h2");
    heading.textContent = `Trace ${this.traceId}`;
    this.root.appendChild(heading);
    const back = document.createElement("a");
    back.href = `#/runs/${this.runId}`;
    back.textContent = "← back to report";
    back.className = "back-link";
    this.root.appendChild(back);

    this.root.appendChild(renderGraph(this.view, (edge) => void this.onEdgeClick(edge)));

    const panels = document.createElement("div");
    panels.className = "payload-panels";
    for (const edgeId of this.view.expanded_edges) {
      const edge = this.view.graph.edges.find((e) => e.id === edgeId);
      if (edge) panels.appendChild(this.panelFor(edge));
    }
    this.root.appendChild(panels);
  }

  private panelFor(edge: GraphEdgeDto): HTMLElement {
    const panel = document.createElement("section");
    panel.className = "payload-panel" + (edge.error_highlight ? " panel-error" : "");
    panel.dataset.edgeId = edge.id;
    const title = document.createElement("h3");
    title.textContent = `${edge.id} — ${edge.kind} ${edge.label}`;
    panel.appendChild(title);

    if (this.report) {
      const exchange = edge.id.replace(/-(req|res)$/, "");
      for (const evidence of evidenceForEdge(this.report, this.traceId, exchange, edge.kind === "response" ? "response" : "request")) {
        const block = document.createElement("blockquote");
        block.className = "evidence";
        block.textContent = `${evidence.pattern_id}: ${evidence.matched_excerpt}`;
        panel.appendChild(block);
      }
    }

    if (!edge.payload_ref) {
      const missing = document.createElement("p");
      missing.className = "body-unavailable";
      missing.textContent = "body unavailable (not captured)";
      panel.appendChild(missing);
      return panel;
    }

    if (!this.traces) {
      const loading = document.createElement("p");
      loading.className = "muted";
      loading.textContent = "loading payload…";
      panel.appendChild(loading);
      return panel;
    }

    const payload = resolvePayload(this.traces, edge.payload_ref);
    if (!payload) {
      const missing = document.createElement("p");
      missing.className = "body-unavailable";
      missing.textContent = "body unavailable (not captured)";
      panel.appendChild(missing);
      return panel;
    }
    if (payload.headers) {
      const table = document.createElement("table");
      table.className = "headers";
      for (const [name, value] of Object.entries(payload.headers)) {
        const row = table.insertRow();
        row.insertCell().textContent = name;
        row.insertCell().textContent = value;
      }
      panel.appendChild(table);
    }
    if (payload.body !== undefined) {
      const pre = document.createElement("pre");
      pre.className = "body";
      pre.textContent = payload.body + (payload.truncated ? "\n… (truncated at capture limit)" : "");
      panel.appendChild(pre);
    } else {
      const missing = document.createElement("p");
      missing.className = "body-unavailable";
      missing.textContent = "body unavailable (not captured)";
      panel.appendChild(missing);
    }
    return panel;
  }
}

export function errorBox(err: unknown): HTMLElement {
  const box = document.createElement("div");
  box.className = "error-box";
  if (err instanceof ApiError) {
    box.textContent = `${err.code}: ${err.message}`;
  } else {
    box.textContent = String(err);
  }
  return box;
}
