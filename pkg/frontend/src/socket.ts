/** Auto-reconnecting websocket subscription to the /scene stream.
 *
 * The server sends a full snapshot on every (re)connect, so recovery needs no
 * client-side state: drop the connection, back off, reconnect, resync.
 */

export type ConnectionStatus = "connecting" | "connected" | "disconnected";

interface WebSocketLike {
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  close(): void;
}

export interface SceneSocketOptions {
  /** WebSocket constructor; defaults to the browser global. Tests inject ws. */
  webSocketImpl?: new (url: string) => WebSocketLike;
  initialBackoffMs?: number;
  maxBackoffMs?: number;
}

export class SceneSocket {
  onMessage: ((data: unknown) => void) | null = null;
  onStatus: ((status: ConnectionStatus) => void) | null = null;
  status: ConnectionStatus = "disconnected";
  backoffMs: number;

  private readonly impl: new (url: string) => WebSocketLike;
  private readonly initialBackoffMs: number;
  private readonly maxBackoffMs: number;
  private ws: WebSocketLike | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private stopped = false;

  constructor(private readonly url: string, options: SceneSocketOptions = {}) {
    const impl = options.webSocketImpl
      ?? (globalThis as { WebSocket?: new (url: string) => WebSocketLike }).WebSocket;
    if (!impl) throw new Error("no WebSocket implementation available");
    this.impl = impl;
    this.initialBackoffMs = options.initialBackoffMs ?? 500;
    this.maxBackoffMs = options.maxBackoffMs ?? 10_000;
    this.backoffMs = this.initialBackoffMs;
  }

  connect(): void {
    this.stopped = false;
    this.open();
  }

  close(): void {
    this.stopped = true;
    if (this.timer) clearTimeout(this.timer);
    this.ws?.close();
    this.setStatus("disconnected");
  }

  private open(): void {
    this.setStatus("connecting");
    const ws = new this.impl(this.url);
    this.ws = ws;
    ws.onopen = () => {
      this.backoffMs = this.initialBackoffMs;
      this.setStatus("connected");
    };
    ws.onmessage = (ev) => {
      let parsed: unknown = ev.data;
      if (typeof ev.data === "string") {
        try {
          parsed = JSON.parse(ev.data);
        } catch {
          return;
        }
      }
      this.onMessage?.(parsed);
    };
    ws.onerror = () => {
      /* close always follows; reconnect handled there */
    };
    ws.onclose = () => {
      if (this.ws !== ws) return;
      this.ws = null;
      this.setStatus("disconnected");
      if (!this.stopped) this.scheduleReconnect();
    };
  }

  private scheduleReconnect(): void {
    this.timer = setTimeout(() => this.open(), this.backoffMs);
    this.backoffMs = Math.min(this.backoffMs * 2, this.maxBackoffMs);
  }

  private setStatus(status: ConnectionStatus): void {
    if (status === this.status) return;
    this.status = status;
    this.onStatus?.(status);
  }
}
