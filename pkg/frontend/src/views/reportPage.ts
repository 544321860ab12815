// Report browser: the three sections, with section 3 grouped into the four
// finding categories; every item links to its trace graph. Polls the run
// status while the run is still executing.

import { ApiClient, FindingItemDto, ReportDto } from "../api.js";
import { errorBox } from "./graphPage.js";

const CATEGORY_ORDER: [keyof ReportDto["sections"]["findings"], string][] = [
  ["leak_both", "1. Exception leakage in main and sub responses"],
  ["leak_main_only", "2. Exception leakage in the main response only"],
  ["leak_sub_only", "3. Exception leakage in sub responses only"],
  ["server_error_5xx", "4. HTTP 5xx return status"],
];

export class ReportPage {
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private readonly client: ApiClient,
    private readonly runId: string,
    private readonly root: HTMLElement,
    private readonly pollMs = 800,
  ) {}

  dispose(): void {
    if (this.timer) clearTimeout(this.timer);
  }

  async load(): Promise<void> {
    let phase: string;
    try {
      const status = await this.client.getStatus(this.runId);
      phase = status.phase;
      if (phase !== "done" && phase !== "failed") {
        this.renderStatus(status.phase, status.sequences_done, status.budget_sequences);
        this.timer = setTimeout(() => void this.load(), this.pollMs);
        return;
      }
      if (phase === "failed") {
        this.root.innerHTML = "";
        const box = document.createElement("div");
        box.className = "error-box";
        box.textContent = `run failed: ${status.last_error ?? "unknown error"}`;
        this.root.appendChild(box);
        return;
      }
      const report = await this.client.getReport(this.runId);
      this.render(report);
    } catch (err) {
      this.root.innerHTML = "";
      this.root.appendChild(errorBox(err));
    }
  }

  private renderStatus(phase: string, done: number, budget: number | null): void {
    this.root.innerHTML = "";
    const p = document.createElement("p");
    p.className = "run-status";
    p.textContent = budget
      ? `run ${this.runId}: ${phase} (${done}/${budget} sequences)`
      : `run ${this.runId}: ${phase}`;
    this.root.appendChild(p);
  }

  render(report: ReportDto): void {
    this.root.innerHTML = "";
    const heading = document.createElement("h2");
    heading.textContent = `Run ${report.run_id}`;
    this.root.appendChild(heading);

    const summary = report.sections.summary;
    const section1 = document.createElement("section");
    section1.className = "report-summary";
    section1.innerHTML = "<h3>Test summary</h3>";
    const dl = document.createElement("dl");
    const pairs: [string, string][] = [
      [
        "API coverage",
        `${summary.coverage.executed_operations}/${summary.coverage.total_operations}` +
          ` (${(summary.coverage.coverage * 100).toFixed(1)}%)`,
      ],
      ["Main requests", String(summary.total_main_requests)],
      ["Total responses", String(summary.total_responses)],
    ];
    for (const [term, value] of pairs) {
      const dt = document.createElement("dt");
      dt.textContent = term;
      const dd = document.createElement("dd");
      dd.textContent = value;
      dl.append(dt, dd);
    }
    section1.appendChild(dl);
    const histogram = document.createElement("table");
    histogram.className = "histogram";
    for (const [status, count] of Object.entries(summary.status_histogram)) {
      const row = histogram.insertRow();
      row.insertCell().textContent = status;
      row.insertCell().textContent = String(count);
    }
    section1.appendChild(histogram);
    this.root.appendChild(section1);

    const section2 = document.createElement("section");
    section2.className = "report-errors";
    section2.innerHTML = "<h3>Error responses</h3>";
    const bff = document.createElement("p");
    bff.textContent = `From the BFF: ${report.sections.error_counts.errors_from_bff}`;
    section2.appendChild(bff);
    const perBackend = document.createElement("table");
    perBackend.className = "per-backend";
    for (const [backend, count] of Object.entries(
      report.sections.error_counts.errors_per_backend,
    )) {
      const row = perBackend.insertRow();
      row.insertCell().textContent = backend;
      row.insertCell().textContent = String(count);
    }
    section2.appendChild(perBackend);
    this.root.appendChild(section2);

    const section3 = document.createElement("section");
    section3.className = "report-findings";
    section3.innerHTML = "<h3>Flagged request sequences</h3>";
    for (const [key, title] of CATEGORY_ORDER) {
      const group = document.createElement("div");
      group.className = `category category-${key}`;
      const items = report.sections.findings[key];
      const h4 = document.createElement("h4");
      h4.textContent = `${title} (${items.length})`;
      group.appendChild(h4);
      const list = document.createElement("ul");
      for (const item of items) list.appendChild(this.findingItem(item));
      group.appendChild(list);
      section3.appendChild(group);
    }
    this.root.appendChild(section3);
  }

  private findingItem(item: FindingItemDto): HTMLElement {
    const li = document.createElement("li");
    li.className = "finding";
    const link = document.createElement("a");
    link.href = `#/runs/${this.runId}/graph/${item.trace}`;
    link.textContent = `trace ${item.trace}`;
    li.appendChild(link);
    const statuses = document.createElement("span");
    statuses.className = "statuses";
    statuses.textContent = ` statuses [${item.statuses.join(", ")}]`;
    li.appendChild(statuses);
    const requests = document.createElement("div");
    requests.className = "sequence";
    requests.textContent = item.requests
      .map((r) => `${r.role}: ${r.method} ${r.uri} → ${r.status}`)
      .join("  |  ");
    li.appendChild(requests);
    for (const evidence of item.evidence) {
      const excerpt = document.createElement("div");
      excerpt.className = "excerpt";
      excerpt.textContent = `${evidence.pattern_id} @ ${evidence.location}: ${evidence.matched_excerpt}`;
      li.appendChild(excerpt);
    }
    return li;
  }
}
