// Run console: submit a run config, watch its phase, and browse history.
// The history list renders exactly what the API returns, in API order.

import { ApiClient, ApiError } from "../api.js";

const CONFIG_PLACEHOLDER = `{
  "mode": "ingest-only",
  "bff": "10.0.0.5:8000",
  "ingest": {"log_path": "http.log", "dialect": "zeek-http"}
}`;

export class ConsolePage {
  constructor(
    private readonly client: ApiClient,
    private readonly root: HTMLElement,
    private readonly navigate: (hash: string) => void = (hash) => {
      location.hash = hash;
    },
    private readonly pollMs = 600,
  ) {}

  async load(): Promise<void> {
    this.root.innerHTML = "";
    const heading = document.createElement("h2");
    heading.textContent = "Start a run";
    this.root.appendChild(heading);

    const form = document.createElement("form");
    form.className = "run-form";
    const textarea = document.createElement("textarea");
    textarea.name = "config";
    textarea.rows = 10;
    textarea.placeholder = CONFIG_PLACEHOLDER;
    form.appendChild(textarea);
    const submit = document.createElement("button");
    submit.type = "submit";
    submit.textContent = "Start run";
    form.appendChild(submit);
    const feedback = document.createElement("div");
    feedback.className = "form-feedback";
    form.appendChild(feedback);
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.submit(textarea.value, feedback);
    });
    this.root.appendChild(form);

    const historyHeading = document.createElement("h2");
    historyHeading.textContent = "Test history";
    this.root.appendChild(historyHeading);
    const history = document.createElement("div");
    history.className = "history";
    this.root.appendChild(history);
    await this.renderHistory(history);
  }

  private async submit(raw: string, feedback: HTMLElement): Promise<void> {
    feedback.textContent = "";
    feedback.className = "form-feedback";
    let config: unknown;
    try {
      config = JSON.parse(raw);
    } catch (err) {
      feedback.classList.add("error-box");
      feedback.textContent = `config is not valid JSON: ${err}`;
      return;
    }
    let runId: string;
    try {
      const started = await this.client.startRun(config);
      runId = started.run_id;
    } catch (err) {
      feedback.classList.add("error-box");
      // the API's {code, message} is shown verbatim
      feedback.textContent =
        err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
      return;
    }
    feedback.textContent = `run ${runId} started`;
    await this.poll(runId, feedback);
  }

  private async poll(runId: string, feedback: HTMLElement): Promise<void> {
    try {
      const status = await this.client.getStatus(runId);
      if (status.phase === "done" || status.phase === "failed") {
        this.navigate(`#/runs/${runId}`);
        return;
      }
      feedback.textContent = status.budget_sequences
        ? `run ${runId}: ${status.phase} (${status.sequences_done}/${status.budget_sequences})`
        : `run ${runId}: ${status.phase}`;
    } catch (err) {
      feedback.classList.add("error-box");
      feedback.textContent = err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
      return;
    }
    setTimeout(() => void this.poll(runId, feedback), this.pollMs);
  }

  private async renderHistory(container: HTMLElement): Promise<void> {
    let rows;
    try {
      rows = (await this.client.listRuns()).runs;
    } catch (err) {
      container.appendChild(
        Object.assign(document.createElement("div"), {
          className: "error-box",
          textContent: err instanceof ApiError ? `${err.code}: ${err.message}` : String(err),
        }),
      );
      return;
    }
    if (!rows.length) {
      container.innerHTML = "<p class='muted'>no runs yet</p>";
      return;
    }
    const table = document.createElement("table");
    table.className = "history-table";
    const head = table.createTHead().insertRow();
    for (const title of ["run", "created (UTC)", "status", "findings"]) {
      const th = document.createElement("th");
      th.textContent = title;
      head.appendChild(th);
    }
    const body = table.createTBody();
    for (const row of rows) {
      const tr = body.insertRow();
      const link = document.createElement("a");
      link.href = `#/runs/${row.run_id}`;
      link.textContent = row.run_id;
      tr.insertCell().appendChild(link);
      tr.insertCell().textContent = new Date(row.created_at / 1000).toISOString();
      tr.insertCell().textContent = row.status;
      tr.insertCell().textContent =
        Object.entries(row.finding_counts)
          .map(([category, count]) => `${category}=${count}`)
          .join(", ") || "—";
    }
    container.appendChild(table);
  }
}
