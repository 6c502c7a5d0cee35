/** Differential grid rendering.
 *
 * The dashboard computes no statistics: every number shown is the
 * stringified payload value, and the row color is a direct mapping of
 * the backend's significant_95 tri-state (hatched when the sample is
 * small). Keeping this module pure makes the thin-client property
 * testable cell by cell.
 */

import { CubeResponse, DifferentialRow } from "./types.js";

export function significanceClass(row: DifferentialRow): string {
  if (row.significant_95 === "positive") return "sig-positive";
  if (row.significant_95 === "negative") return "sig-negative";
  return "sig-neutral";
}

/** Verbatim rendering: numbers pass through String(), nulls show as a
 * dash, so a displayed value can always be traced to the payload. */
export function formatCell(value: number | string | boolean | null): string {
  if (value === null || value === undefined) return "—";
  return String(value);
}

const NUMERIC_COLUMNS: [keyof DifferentialRow, string][] = [
  ["mean_test", "test mean"],
  ["mean_control", "control mean"],
  ["diff_pct", "diff %"],
  ["t_stat", "t"],
  ["n_test", "n test"],
  ["n_control", "n control"],
];

export function renderGrid(payload: CubeResponse): HTMLElement {
  const table = document.createElement("table");
  table.className = "grid";
  table.dataset.testid = "grid";
  table.dataset.cube = payload.cube;
  table.dataset.measure = payload.measure;

  const thead = document.createElement("thead");
  const head = document.createElement("tr");
  for (const title of ["bin", ...NUMERIC_COLUMNS.map(([, t]) => t),
                       "significance"]) {
    const cell = document.createElement("th");
    cell.textContent = title;
    head.appendChild(cell);
  }
  thead.appendChild(head);
  table.appendChild(thead);

  const body = document.createElement("tbody");
  table.appendChild(body);
  for (const row of payload.bins) {
    const tr = document.createElement("tr");
    body.appendChild(tr);
    tr.className = significanceClass(row);
    if (row.small_sample_flag) tr.classList.add("small-sample");
    if (row.undefined) tr.classList.add("undefined-bin");
    tr.dataset.bin = row.bin;

    const binCell = document.createElement("td");
    tr.appendChild(binCell);
    binCell.textContent = row.bin;
    binCell.dataset.field = "bin";

    for (const [field] of NUMERIC_COLUMNS) {
      const cell = document.createElement("td");
      tr.appendChild(cell);
      cell.dataset.field = field;
      cell.textContent = formatCell(
        row[field] as number | null,
      );
    }
    const sigCell = document.createElement("td");
    tr.appendChild(sigCell);
    sigCell.dataset.field = "significant_95";
    sigCell.textContent = row.undefined ? "n/a" : row.significant_95;
  }
  return table;
}

export function renderBanner(message: string): HTMLElement {
  const banner = document.createElement("div");
  banner.className = "error-banner";
  banner.dataset.testid = "error-banner";
  banner.textContent = message;
  return banner;
}

export function renderNotice(message: string): HTMLElement {
  const notice = document.createElement("div");
  notice.className = "notice";
  notice.dataset.testid = "notice";
  notice.textContent = message;
  return notice;
}
