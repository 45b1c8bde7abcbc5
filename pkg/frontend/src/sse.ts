// Server-sent-events client over streaming fetch. The UI only ever receives
// pushes on this channel; commands stay plain HTTP. Reconnects with capped
// exponential backoff and surfaces the connection state so the header can
// show a visible disconnected indicator.

import type { ConnectionStatus, StreamEvent } from "./types.js";

export interface StreamHandlers {
  onEvent: (event: StreamEvent) => void;
  onStatus: (status: ConnectionStatus) => void;
}

interface LiveStreamOptions {
  fetchFn?: typeof fetch;
  minBackoffMs?: number;
  maxBackoffMs?: number;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

/** Parse one SSE frame (the text between blank lines). Comments yield null. */
export function parseFrame(frame: string): StreamEvent | null {
  let eventName = "";
  const dataLines: string[] = [];
  for (const line of frame.split("\n")) {
    if (line.startsWith(":")) continue; // heartbeat / comment
    if (line.startsWith("event:")) eventName = line.slice(6).trim();
    if (line.startsWith("data:")) dataLines.push(line.slice(5).trim());
  }
  if (!eventName || dataLines.length === 0) return null;
  if (eventName !== "alert" && eventName !== "enrollment" && eventName !== "device") return null;
  try {
    return { event: eventName, data: JSON.parse(dataLines.join("\n")) };
  } catch {
    return null;
  }
}

export class LiveStream {
  private stopped = false;
  private backoffMs: number;
  private readonly fetchFn: typeof fetch;
  private readonly minBackoffMs: number;
  private readonly maxBackoffMs: number;
  private readonly sleep: (ms: number) => Promise<void>;

  constructor(
    private url: string,
    private handlers: StreamHandlers,
    options: LiveStreamOptions = {},
  ) {
    this.fetchFn = options.fetchFn ?? fetch.bind(globalThis);
    this.minBackoffMs = options.minBackoffMs ?? 1000;
    this.maxBackoffMs = options.maxBackoffMs ?? 15_000;
    this.backoffMs = this.minBackoffMs;
    this.sleep = options.sleep ?? defaultSleep;
  }

  stop(): void {
    this.stopped = true;
  }

  async run(): Promise<void> {
    while (!this.stopped) {
      this.handlers.onStatus("connecting");
      try {
        const response = await this.fetchFn(this.url, {
          headers: { Accept: "text/event-stream" },
        });
        if (!response.ok || response.body === null) {
          throw new Error(`stream answered ${response.status}`);
        }
        this.handlers.onStatus("live");
        this.backoffMs = this.minBackoffMs;
        await this.consume(response.body);
      } catch {
        // fall through to reconnect
      }
      if (this.stopped) break;
      this.handlers.onStatus("disconnected");
      await this.sleep(this.backoffMs);
      this.backoffMs = Math.min(this.backoffMs * 2, this.maxBackoffMs);
    }
  }

  private async consume(body: ReadableStream<Uint8Array>): Promise<void> {
    const reader = body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    try {
      while (!this.stopped) {
        const { done, value } = await reader.read();
        if (done) break;
        buffer += decoder.decode(value, { stream: true });
        let split;
        while ((split = buffer.indexOf("\n\n")) >= 0) {
          const frame = buffer.slice(0, split);
          buffer = buffer.slice(split + 2);
          const event = parseFrame(frame);
          if (event !== null) this.handlers.onEvent(event);
        }
      }
    } finally {
      reader.releaseLock();
      if (this.stopped) {
        try {
          await body.cancel();
        } catch {
          // already closed
        }
      }
    }
  }
}
