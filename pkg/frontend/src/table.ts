import type { Cell } from "./types.js";

/**
 * Result table with clickable, sortable column headers.
 *
 * The initial render preserves the column order and row order of the
 * response exactly; sorting only happens on user interaction and every
 * header click re-sorts from the original row list (toggling direction).
 */
export function renderResultTable(columns: string[], rows: Cell[][]): HTMLTableElement {
  const table = document.createElement("table");
  table.className = "result-table";
  const head = table.createTHead();
  const headRow = head.insertRow();
  const body = table.createTBody();
  const original = rows.map((row) => [...row]);

  const fill = (data: Cell[][]) => {
    body.replaceChildren();
    for (const row of data) {
      const tr = body.insertRow();
      for (const cell of row) {
        const td = tr.insertCell();
        td.textContent = cell === null ? "" : String(cell);
        if (typeof cell === "number") td.className = "numeric";
      }
    }
  };

  let sortedBy = -1;
  let descending = false;
  columns.forEach((name, index) => {
    const th = document.createElement("th");
    th.textContent = name;
    th.tabIndex = 0;
    th.setAttribute("role", "button");
    th.addEventListener("click", () => {
      descending = sortedBy === index ? !descending : false;
      sortedBy = index;
      const sorted = [...original].sort((a, b) => compareCells(a[index], b[index]));
      if (descending) sorted.reverse();
      fill(sorted);
      headRow.querySelectorAll("th").forEach((h) => h.removeAttribute("data-sort"));
      th.setAttribute("data-sort", descending ? "desc" : "asc");
    });
    headRow.appendChild(th);
  });

  fill(original);
  return table;
}

function compareCells(a: Cell, b: Cell): number {
  if (a === null) return b === null ? 0 : -1;
  if (b === null) return 1;
  if (typeof a === "number" && typeof b === "number") return a - b;
  return String(a).localeCompare(String(b));
}
