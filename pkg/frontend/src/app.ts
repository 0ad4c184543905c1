import { ApiClient, TraceExpiredError } from "./api.js";
import { renderResultTable } from "./table.js";
import { renderTracePanel } from "./trace.js";
import type { AskResponse } from "./types.js";

interface PendingQuestion {
  question: string;
  turn: HTMLElement;
}

/**
 * Chat view over the HTTP API. Turns are append-only within the session;
 * one question is in flight at a time and further submissions queue.
 * All state is browser-local.
 */
export class ChatApp {
  readonly root: HTMLElement;
  private readonly api: ApiClient;
  private readonly turnList: HTMLElement;
  private readonly input: HTMLInputElement;
  private readonly submit: HTMLButtonElement;
  private readonly tracePane: HTMLElement;
  private busy = false;
  private readonly queue: PendingQuestion[] = [];

  constructor(root: HTMLElement, api: ApiClient) {
    this.root = root;
    this.api = api;
    root.innerHTML = `
      <div class="chat-layout">
        <div class="chat-main">
          <header class="chat-header">
            <h1>finask</h1>
            <span class="health-dot" data-health="unknown" title="service health"></span>
          </header>
          <details class="schema-browser" data-role="schema">
            <summary>Warehouse schema</summary>
            <div class="schema-tables"></div>
          </details>
          <div class="turns" data-role="turns"></div>
          <form class="ask-form" data-role="form">
            <input type="text" data-role="question" autocomplete="off"
                   placeholder="Ask about the financial statements..." />
            <button type="submit" data-role="submit" disabled>Ask</button>
          </form>
        </div>
        <aside class="trace-pane" data-role="trace" hidden></aside>
      </div>`;
    this.turnList = root.querySelector('[data-role="turns"]')!;
    this.input = root.querySelector('[data-role="question"]')!;
    this.submit = root.querySelector('[data-role="submit"]')!;
    this.tracePane = root.querySelector('[data-role="trace"]')!;

    this.input.addEventListener("input", () => this.syncSubmitState());
    root.querySelector('[data-role="form"]')!.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.submitQuestion(this.input.value);
    });
    void this.refreshHealth();
    void this.loadSchema();
  }

  /** Fill the collapsible schema browser from /api/schema. */
  async loadSchema(): Promise<void> {
    const host = this.root.querySelector<HTMLElement>(".schema-tables")!;
    try {
      const schema = await this.api.schema();
      host.replaceChildren();
      for (const table of schema.tables ?? []) {
        const line = document.createElement("p");
        line.className = "schema-table";
        line.textContent =
          `${table.name}(${(table.columns ?? []).map((c) => c.name).join(", ")})`;
        host.appendChild(line);
      }
      const codes = document.createElement("p");
      codes.className = "schema-codes muted";
      codes.textContent =
        `${Object.keys(schema.category_codes ?? {}).length} account codes, ` +
        `${Object.keys(schema.ratio_codes ?? {}).length} ratio codes`;
      host.appendChild(codes);
    } catch {
      host.textContent = "schema unavailable";
    }
  }

  private syncSubmitState(): void {
    this.submit.disabled = this.input.value.trim().length === 0;
  }

  async refreshHealth(): Promise<void> {
    const dot = this.root.querySelector<HTMLElement>(".health-dot")!;
    try {
      const health = await this.api.healthz();
      dot.dataset.health = health.ready ? "ready" : "degraded";
    } catch {
      dot.dataset.health = "down";
    }
  }

  /** Submit a question; returns the turn element once resolved. */
  async submitQuestion(text: string): Promise<HTMLElement | null> {
    const question = text.trim();
    if (!question) return null;
    const turn = this.appendTurn(question);
    this.input.value = "";
    this.syncSubmitState();
    if (this.busy) {
      this.queue.push({ question, turn });
      turn.querySelector(".turn-status")!.textContent = "queued";
      return turn;
    }
    await this.runQuestion(question, turn);
    return turn;
  }

  private appendTurn(question: string): HTMLElement {
    const turn = document.createElement("article");
    turn.className = "turn";
    turn.innerHTML = `
      <p class="turn-question"></p>
      <p class="turn-status">running...</p>
      <div class="turn-result"></div>
      <footer class="turn-meta"></footer>`;
    turn.querySelector(".turn-question")!.textContent = question;
    this.turnList.appendChild(turn);
    return turn;
  }

  private async runQuestion(question: string, turn: HTMLElement): Promise<void> {
    this.busy = true;
    try {
      const response = await this.api.ask(question);
      this.renderOutcome(turn, question, response);
    } catch (error) {
      this.renderFailure(turn, question, error);
    } finally {
      this.busy = false;
      const next = this.queue.shift();
      if (next) void this.runQuestion(next.question, next.turn);
    }
  }

  private renderOutcome(turn: HTMLElement, question: string, response: AskResponse): void {
    const status = turn.querySelector<HTMLElement>(".turn-status")!;
    const result = turn.querySelector<HTMLElement>(".turn-result")!;
    const meta = turn.querySelector<HTMLElement>(".turn-meta")!;
    status.textContent = response.status;
    turn.dataset.status = response.status;
    if (response.status === "answered" && response.columns && response.rows) {
      result.appendChild(renderResultTable(response.columns, response.rows));
    } else {
      const error = document.createElement("p");
      error.className = `error error-${response.status}`;
      error.textContent = response.status === "exhausted"
        ? "The model could not produce an accepted result within its correction budget."
        : response.detail ?? "The pipeline did not produce an answer.";
      result.appendChild(error);
    }
    if (typeof response.elapsed_ms === "number") {
      const badge = document.createElement("span");
      badge.className = "badge timing-badge";
      badge.textContent = `${response.elapsed_ms.toFixed(0)} ms`;
      meta.appendChild(badge);
    }
    if (response.trace_id) {
      meta.appendChild(this.traceLink(response.trace_id));
    }
  }

  private renderFailure(turn: HTMLElement, question: string, error: unknown): void {
    turn.dataset.status = "failed";
    turn.querySelector(".turn-status")!.textContent = "failed";
    const result = turn.querySelector<HTMLElement>(".turn-result")!;
    const message = document.createElement("p");
    message.className = "error error-network";
    message.textContent = error instanceof Error ? error.message : "network failure";
    result.appendChild(message);
    const retry = document.createElement("button");
    retry.type = "button";
    retry.className = "retry";
    retry.textContent = "Retry";
    retry.addEventListener("click", () => {
      result.replaceChildren();
      turn.querySelector(".turn-status")!.textContent = "running...";
      void this.runQuestion(question, turn);
    });
    result.appendChild(retry);
  }

  private traceLink(traceId: string): HTMLElement {
    const link = document.createElement("a");
    link.href = `#trace-${traceId}`;
    link.className = "trace-link";
    link.textContent = "view trace";
    link.addEventListener("click", (event) => {
      event.preventDefault();
      void this.viewTrace(traceId);
    });
    return link;
  }

  /** Fetch and render the trace panel for a finished run. */
  async viewTrace(traceId: string): Promise<void> {
    this.tracePane.hidden = false;
    this.tracePane.replaceChildren();
    try {
      const doc = await this.api.trace(traceId);
      this.tracePane.appendChild(renderTracePanel(doc));
    } catch (error) {
      const notice = document.createElement("p");
      notice.className = "trace-expired";
      notice.textContent = error instanceof TraceExpiredError
        ? "trace expired"
        : "failed to load trace";
      this.tracePane.appendChild(notice);
    }
  }
}

export function mountChatApp(root: HTMLElement, baseUrl = ""): ChatApp {
  return new ChatApp(root, new ApiClient(baseUrl));
}
