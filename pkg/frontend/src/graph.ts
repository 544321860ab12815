// SVG rendering of one trace graph: fixed left-to-right lanes
// (client | BFF | backends) so the main exchange always reads left, the
// fan-out right. Error edges are drawn red; clicking an edge toggles its
// payload panel.

import type { GraphEdgeDto, GraphModelDto } from "./api.js";

export interface GraphView {
  graph: GraphModelDto;
  expanded_edges: Set<string>;
  selected_trace: string;
}

const SVG_NS = "http://www.w3.org/2000/svg";

const LANE_CLIENT = 90;
const LANE_BFF = 380;
const LANE_BACKEND = 670;
const ROW_TOP = 70;
const ROW_STEP = 64;
const RES_OFFSET = 24;

function svgEl<K extends keyof SVGElementTagNameMap>(
  tag: K,
  attrs: Record<string, string>,
): SVGElementTagNameMap[K] {
  const el = document.createElementNS(SVG_NS, tag);
  for (const [key, value] of Object.entries(attrs)) el.setAttribute(key, value);
  return el;
}

function exchangeIndex(edgeId: string): number {
  // row layout: "main-*" is row 0, "sub<i>-*" is row i+1
  if (edgeId.startsWith("main")) return 0;
  const match = /^sub(\d+)-/.exec(edgeId);
  return match ? Number(match[1]) + 1 : 0;
}

export function toggleEdge(view: GraphView, edgeId: string): GraphView {
  // invariant: expanded_edges stays a subset of the graph's edge ids
  if (!view.graph.edges.some((e) => e.id === edgeId)) return view;
  if (view.expanded_edges.has(edgeId)) view.expanded_edges.delete(edgeId);
  else view.expanded_edges.add(edgeId);
  return view;
}

export function renderGraph(
  view: GraphView,
  onEdgeClick?: (edge: GraphEdgeDto) => void,
): SVGSVGElement {
  const { graph } = view;
  const subRows = graph.edges.filter((e) => e.kind === "request").length - 1;
  const height = ROW_TOP + Math.max(1, subRows + 1) * ROW_STEP + 40;
  const svg = svgEl("svg", {
    viewBox: `0 0 760 ${height}`,
    width: "760",
    height: String(height),
    class: "trace-graph",
    role: "img",
  });

  const defs = svgEl("defs", {});
  for (const [id, cls] of [
    ["arrow", "arrow-plain"],
    ["arrow-error", "arrow-error"],
  ]) {
    const marker = svgEl("marker", {
      id,
      viewBox: "0 0 10 10",
      refX: "9",
      refY: "5",
      markerWidth: "7",
      markerHeight: "7",
      orient: "auto-start-reverse",
    });
    const tip = svgEl("path", { d: "M 0 0 L 10 5 L 0 10 z", class: cls });
    marker.appendChild(tip);
    defs.appendChild(marker);
  }
  svg.appendChild(defs);

  // node positions: client and bff sit at the main row; each backend at the
  // row of its first exchange
  const nodeY = new Map<string, number>();
  nodeY.set("client", ROW_TOP);
  nodeY.set("bff", ROW_TOP);
  for (const edge of graph.edges) {
    if (edge.kind !== "request") continue;
    const row = exchangeIndex(edge.id);
    const target = edge.id.startsWith("main") ? "bff" : edge.to;
    if (!nodeY.has(target)) nodeY.set(target, ROW_TOP + row * ROW_STEP);
  }

  const nodeX = (id: string, kind: string): number =>
    kind === "client" ? LANE_CLIENT : kind === "bff" ? LANE_BFF : LANE_BACKEND;

  for (const node of graph.nodes) {
    const x = nodeX(node.id, node.kind);
    const y = nodeY.get(node.id) ?? ROW_TOP;
    const group = svgEl("g", {
      class: `node node-${node.kind}`,
      "data-node-id": node.id,
    });
    if (node.kind === "client") {
      // the client is a triangle pointing at the BFF
      group.appendChild(
        svgEl("polygon", {
          points: `${x - 14},${y - 14} ${x - 14},${y + 14} ${x + 14},${y}`,
          class: "shape shape-client",
        }),
      );
    } else if (node.kind === "bff") {
      group.appendChild(
        svgEl("rect", {
          x: String(x - 16),
          y: String(y - 16),
          width: "32",
          height: "32",
          rx: "6",
          class: "shape shape-bff",
        }),
      );
    } else {
      group.appendChild(
        svgEl("circle", { cx: String(x), cy: String(y), r: "14", class: "shape shape-backend" }),
      );
    }
    const label = svgEl("text", {
      x: String(x),
      y: String(y - 22),
      class: "node-label",
      "text-anchor": "middle",
    });
    label.textContent = node.label;
    group.appendChild(label);
    svg.appendChild(group);
  }

  for (const edge of graph.edges) {
    const row = exchangeIndex(edge.id);
    const isMain = edge.id.startsWith("main");
    const y = ROW_TOP + row * ROW_STEP + (edge.kind === "response" ? RES_OFFSET : 0);
    const leftX = isMain ? LANE_CLIENT + 20 : LANE_BFF + 20;
    const rightX = isMain ? LANE_BFF - 20 : LANE_BACKEND - 20;
    const [x1, x2] = edge.kind === "request" ? [leftX, rightX] : [rightX, leftX];

    const classes = ["edge", `edge-${edge.kind}`];
    if (edge.error_highlight) classes.push("edge-error");
    if (view.expanded_edges.has(edge.id)) classes.push("edge-expanded");
    const group = svgEl("g", {
      class: classes.join(" "),
      "data-edge-id": edge.id,
      "data-error": String(edge.error_highlight),
      tabindex: "0",
    });
    group.appendChild(
      svgEl("line", {
        x1: String(x1),
        y1: String(y),
        x2: String(x2),
        y2: String(y),
        class: "edge-line",
        "marker-end": edge.error_highlight ? "url(#arrow-error)" : "url(#arrow)",
      }),
    );
    // fat invisible line so the edge is clickable
    group.appendChild(
      svgEl("line", {
        x1: String(Math.min(x1, x2)),
        y1: String(y),
        x2: String(Math.max(x1, x2)),
        y2: String(y),
        class: "edge-hit",
      }),
    );
    const label = svgEl("text", {
      x: String((x1 + x2) / 2),
      y: String(y - 6),
      class: "edge-label",
      "text-anchor": "middle",
    });
    label.textContent = edge.label;
    group.appendChild(label);
    if (onEdgeClick) {
      group.addEventListener("click", () => onEdgeClick(edge));
    }
    svg.appendChild(group);
  }
  return svg;
}
