import { renderDiff } from "./diff.js";
import { renderResultTable } from "./table.js";
import type { SqlAttempt, TraceDoc } from "./types.js";

const ENTITY_FIELDS = [
  "industry",
  "company_name",
  "financial_statement_account",
  "financial_ratio",
] as const;

/**
 * Schema-driven trace panel: entities, candidates, probes, one card per
 * SQL attempt (guard verdict, diff against the previous attempt,
 * execution, correction decision) and stage timings.  Renders any
 * document conforming to the published trace schema; absent or empty
 * sections collapse silently.
 */
export function renderTracePanel(doc: TraceDoc): HTMLElement {
  const panel = document.createElement("section");
  panel.className = "trace-panel";

  panel.appendChild(heading(`Trace ${doc.trace_id ?? ""}`));
  panel.appendChild(paragraph(doc.question ?? "", "trace-question"));

  panel.appendChild(renderEntities(doc));
  panel.appendChild(renderCandidates(doc));
  panel.appendChild(renderProbes(doc));
  panel.appendChild(renderAttempts(doc));
  panel.appendChild(renderTimings(doc));
  return panel;
}

function renderEntities(doc: TraceDoc): HTMLElement {
  const section = sectionEl("Extracted entities", "trace-entities");
  const entities = doc.entities;
  if (!entities) {
    section.appendChild(paragraph("no entities extracted", "muted"));
    return section;
  }
  const list = document.createElement("dl");
  for (const field of ENTITY_FIELDS) {
    const dt = document.createElement("dt");
    dt.textContent = field;
    const dd = document.createElement("dd");
    const values = entities[field] ?? [];
    dd.textContent = values.length ? values.join(", ") : "—";
    list.appendChild(dt);
    list.appendChild(dd);
  }
  section.appendChild(list);
  for (const warning of doc.entity_warnings ?? []) {
    section.appendChild(paragraph(warning, "warning"));
  }
  return section;
}

function renderCandidates(doc: TraceDoc): HTMLElement {
  const section = sectionEl("Row-selection candidates", "trace-candidates");
  const linked = doc.linked_candidates;
  const fields = linked ? Object.keys(linked).filter((f) => (linked[f] ?? []).length) : [];
  if (!fields.length) {
    section.appendChild(paragraph("no candidates", "muted"));
    return section;
  }
  for (const field of fields) {
    const block = document.createElement("div");
    block.className = "candidate-field";
    block.appendChild(paragraph(field, "candidate-field-name"));
    const ul = document.createElement("ul");
    for (const candidate of linked![field] ?? []) {
      const li = document.createElement("li");
      li.className = "candidate";
      const score = typeof candidate.score === "number" ? candidate.score.toFixed(3) : "?";
      li.textContent =
        `${candidate.term ?? ""} -> ${candidate.resolved_code ?? "?"} ` +
        `(${candidate.surface_text ?? ""}, score ${score})`;
      ul.appendChild(li);
    }
    block.appendChild(ul);
    section.appendChild(block);
  }
  return section;
}

function renderProbes(doc: TraceDoc): HTMLElement {
  const section = sectionEl("Exploration", "trace-probes");
  const probes = doc.probes ?? [];
  if (!probes.length && !doc.exploration_notes) {
    section.hidden = true;
    return section;
  }
  for (const probe of probes) {
    const card = document.createElement("div");
    card.className = "probe-card";
    card.appendChild(badge(probe.guard_verdict ?? "?", `guard-${probe.guard_verdict}`));
    card.appendChild(codeBlock(probe.sql ?? ""));
    card.appendChild(paragraph(probe.outcome ?? "", "probe-outcome"));
    section.appendChild(card);
  }
  return section;
}

function renderAttempts(doc: TraceDoc): HTMLElement {
  const section = sectionEl("SQL attempts", "trace-attempts");
  const attempts = doc.attempts ?? [];
  if (!attempts.length) {
    section.appendChild(paragraph("no SQL was attempted", "muted"));
    return section;
  }
  attempts.forEach((attempt, index) => {
    section.appendChild(renderAttemptCard(attempt, index > 0 ? attempts[index - 1] : null));
  });
  const last = attempts[attempts.length - 1];
  if (last && !last.correction_decision) {
    const banner = paragraph(
      `Correction budget exhausted after ${attempts.length} attempts ` +
        `(${attempts.length - 1} corrections allowed).`,
      "budget-banner");
    section.appendChild(banner);
  }
  return section;
}

function renderAttemptCard(attempt: SqlAttempt, previous: SqlAttempt | null): HTMLElement {
  const card = document.createElement("article");
  card.className = "attempt-card";

  const header = document.createElement("header");
  header.appendChild(paragraph(`Attempt ${(attempt.iteration ?? 0) + 1}`, "attempt-title"));
  const verdict = attempt.guard?.verdict ?? "?";
  header.appendChild(badge(`guard: ${verdict}`, `guard-${verdict}`));
  card.appendChild(header);

  card.appendChild(codeBlock(attempt.sql ?? ""));
  if (previous) {
    const diffWrap = document.createElement("div");
    diffWrap.className = "attempt-diff";
    diffWrap.appendChild(paragraph("diff vs previous attempt", "muted"));
    diffWrap.appendChild(renderDiff(previous.sql ?? "", attempt.sql ?? ""));
    card.appendChild(diffWrap);
  }

  for (const violation of attempt.guard?.violations ?? []) {
    card.appendChild(paragraph(
      `${violation.rule ?? "?"} @ ${violation.location ?? "?"}: ${violation.message ?? ""}`,
      "violation"));
  }
  for (const note of attempt.guard?.notes ?? []) {
    card.appendChild(paragraph(note, "guard-note"));
  }

  const execution = attempt.execution;
  if (execution && execution.kind === "table") {
    const rows = execution.rows ?? [];
    card.appendChild(paragraph(`${rows.length} row(s)`, "muted"));
    card.appendChild(renderResultTable(execution.columns ?? [], rows.slice(0, 10)));
  } else if (execution && execution.kind === "error") {
    card.appendChild(paragraph(
      `execution error (${execution.error_kind ?? "?"}): ${execution.message ?? ""}`,
      "exec-error"));
  }

  const decision = attempt.correction_decision;
  if (decision) {
    const verdictText = (decision.verdict ?? "?").toUpperCase();
    card.appendChild(badge(`decision: ${verdictText}`,
      decision.verdict === "yes" ? "decision-yes" : "decision-no"));
    if (decision.reasoning) card.appendChild(paragraph(decision.reasoning, "reasoning"));
    if (decision.warning) card.appendChild(paragraph(decision.warning, "warning"));
  }
  return card;
}

function renderTimings(doc: TraceDoc): HTMLElement {
  const section = sectionEl("Stage timings", "trace-timings");
  const timings = doc.timings ?? {};
  const names = Object.keys(timings);
  if (!names.length) {
    section.hidden = true;
    return section;
  }
  for (const name of names) {
    const value = timings[name];
    const ms = typeof value === "number" ? (value * 1000).toFixed(1) : "?";
    section.appendChild(badge(`${name}: ${ms} ms`, "timing-badge"));
  }
  return section;
}

// -- tiny DOM helpers ---------------------------------------------------------

function sectionEl(title: string, className: string): HTMLElement {
  const section = document.createElement("section");
  section.className = className;
  section.appendChild(heading(title));
  return section;
}

function heading(text: string): HTMLElement {
  const h = document.createElement("h3");
  h.textContent = text;
  return h;
}

function paragraph(text: string, className: string): HTMLElement {
  const p = document.createElement("p");
  p.className = className;
  p.textContent = text;
  return p;
}

function badge(text: string, className: string): HTMLElement {
  const span = document.createElement("span");
  span.className = `badge ${className}`;
  span.textContent = text;
  return span;
}

function codeBlock(text: string): HTMLElement {
  const pre = document.createElement("pre");
  pre.className = "sql";
  pre.textContent = text;
  return pre;
}
