export interface DiffLine {
  kind: "same" | "add" | "del";
  text: string;
}

/** Line-level diff (longest common subsequence); small inputs only. */
export function lineDiff(before: string, after: string): DiffLine[] {
  const a = before.split("\n");
  const b = after.split("\n");
  const n = a.length;
  const m = b.length;
  const lcs: number[][] = Array.from({ length: n + 1 }, () => new Array(m + 1).fill(0));
  for (let i = n - 1; i >= 0; i--) {
    for (let j = m - 1; j >= 0; j--) {
      lcs[i][j] = a[i] === b[j]
        ? lcs[i + 1][j + 1] + 1
        : Math.max(lcs[i + 1][j], lcs[i][j + 1]);
    }
  }
  const out: DiffLine[] = [];
  let i = 0;
  let j = 0;
  while (i < n && j < m) {
    if (a[i] === b[j]) {
      out.push({ kind: "same", text: a[i] });
      i++;
      j++;
    } else if (lcs[i + 1][j] >= lcs[i][j + 1]) {
      out.push({ kind: "del", text: a[i++] });
    } else {
      out.push({ kind: "add", text: b[j++] });
    }
  }
  while (i < n) out.push({ kind: "del", text: a[i++] });
  while (j < m) out.push({ kind: "add", text: b[j++] });
  return out;
}

export function renderDiff(before: string, after: string): HTMLElement {
  const pre = document.createElement("pre");
  pre.className = "sql-diff";
  for (const line of lineDiff(before, after)) {
    const span = document.createElement("span");
    span.className = `diff-${line.kind}`;
    const marker = line.kind === "add" ? "+ " : line.kind === "del" ? "- " : "  ";
    span.textContent = marker + line.text + "\n";
    pre.appendChild(span);
  }
  return pre;
}
