// Hash router wiring the three pages to the control-service API.

import { ApiClient } from "./api.js";
import { ConsolePage } from "./views/consolePage.js";
import { GraphPage } from "./views/graphPage.js";
import { ReportPage } from "./views/reportPage.js";

const client = new ApiClient("");
let active: { dispose?: () => void } | null = null;

function route(): void {
  const root = document.getElementById("app");
  if (!root) return;
  active?.dispose?.();
  active = null;
  const hash = location.hash || "#/";
  const graphMatch = /^#\/runs\/([^/]+)\/graph\/([^/]+)$/.exec(hash);
  const runMatch = /^#\/runs\/([^/]+)$/.exec(hash);
  if (graphMatch) {
    const page = new GraphPage(client, graphMatch[1], graphMatch[2], root);
    void page.load();
  } else if (runMatch) {
    const page = new ReportPage(client, runMatch[1], root);
    active = page;
    void page.load();
  } else {
    void new ConsolePage(client, root).load();
  }
}

window.addEventListener("hashchange", route);
window.addEventListener("DOMContentLoaded", route);
