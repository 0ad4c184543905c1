import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { vi } from "vitest";

import type { AskResponse, TraceDoc } from "../src/types.js";

const here = dirname(fileURLToPath(import.meta.url));

export function fixture<T>(name: string): T {
  return JSON.parse(readFileSync(join(here, "fixtures", name), "utf-8")) as T;
}

export const goldenAsk = () => fixture<AskResponse>("golden-ask.json");
export const goldenTrace = () => fixture<TraceDoc>("golden-trace.json");
export const brokenThenFixedTrace = () => fixture<TraceDoc>("broken-then-fixed-trace.json");

type RouteTable = Record<string, () => { status: number; body: unknown }>;

/** Install a fetch mock serving the recorded service responses. */
export function mockService(routes: RouteTable): ReturnType<typeof vi.fn> {
  const mock = vi.fn(async (input: RequestInfo | URL) => {
    const url = typeof input === "string" ? input : input.toString();
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    for (const [route, responder] of Object.entries(routes)) {
      if (path === route || path.startsWith(route)) {
        const { status, body } = responder();
        return new Response(JSON.stringify(body), {
          status,
          headers: { "content-type": "application/json" },
        });
      }
    }
    return new Response(JSON.stringify({ detail: { error: "not_found" } }), { status: 404 });
  });
  vi.stubGlobal("fetch", mock);
  return mock;
}

export function mockServiceDown(): void {
  vi.stubGlobal("fetch", vi.fn(async () => {
    throw new TypeError("fetch failed");
  }));
}

export function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}
