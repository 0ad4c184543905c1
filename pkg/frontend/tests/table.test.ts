import { describe, expect, it } from "vitest";

import { renderResultTable } from "../src/table.js";

const COLUMNS = ["stock_code", "year", "credit_growth_yoy"];
const ROWS = [
  ["HDB", 2023, 0.64],
  ["VPB", 2023, 0.52],
  ["MSB", 2023, 0.35],
] as (string | number)[][];

function bodyCells(table: HTMLTableElement): string[][] {
  return [...table.tBodies[0].rows].map((row) =>
    [...row.cells].map((cell) => cell.textContent ?? ""));
}

describe("renderResultTable", () => {
  it("preserves column order and row order from the response", () => {
    const table = renderResultTable(COLUMNS, ROWS);
    const headers = [...table.tHead!.rows[0].cells].map((c) => c.textContent);
    expect(headers).toEqual(COLUMNS);
    expect(bodyCells(table)).toEqual([
      ["HDB", "2023", "0.64"],
      ["VPB", "2023", "0.52"],
      ["MSB", "2023", "0.35"],
    ]);
  });

  it("sorts on header click and toggles direction", () => {
    const table = renderResultTable(COLUMNS, ROWS);
    const growthHeader = table.tHead!.rows[0].cells[2];
    growthHeader.click();
    expect(bodyCells(table).map((r) => r[0])).toEqual(["MSB", "VPB", "HDB"]);
    expect(growthHeader.getAttribute("data-sort")).toBe("asc");
    growthHeader.click();
    expect(bodyCells(table).map((r) => r[0])).toEqual(["HDB", "VPB", "MSB"]);
    expect(growthHeader.getAttribute("data-sort")).toBe("desc");
  });

  it("renders null cells as empty text", () => {
    const table = renderResultTable(["a"], [[null]]);
    expect(bodyCells(table)).toEqual([[""]]);
  });

  it("sorts strings lexicographically and numbers numerically", () => {
    const table = renderResultTable(["n"], [[10], [2], [1]]);
    table.tHead!.rows[0].cells[0].click();
    expect(bodyCells(table).map((r) => r[0])).toEqual(["1", "2", "10"]);
  });
});
