// WebSocket stream client with resume-from-last-seen-sequence.

import type { StreamMessage } from "./types.js";

export type MessageHandler = (message: StreamMessage) => void;

export interface WebSocketLike {
  onopen: ((ev: unknown) => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
  onclose: ((ev: unknown) => void) | null;
  send(data: string): void;
  close(): void;
}

export type WebSocketFactory = (url: string) => WebSocketLike;

const defaultFactory: WebSocketFactory = (url) =>
  new WebSocket(url) as unknown as WebSocketLike;

export class StreamClient {
  private socket: WebSocketLike | null = null;
  private lastSeq = 0;
  private handlers: MessageHandler[] = [];
  private reconnectDelay = 1000;
  private closed = false;

  constructor(
    private credential: string,
    private factory: WebSocketFactory = defaultFactory,
    private baseUrl: string = "",
  ) {}

  on(handler: MessageHandler): void {
    this.handlers.push(handler);
  }

  get resumePoint(): number {
    return this.lastSeq;
  }

  connect(): void {
    this.closed = false;
    const scheme = this.baseUrl.startsWith("https") ? "wss" : "ws";
    const host = this.baseUrl.replace(/^https?:\/\//, "") || location.host;
    const url = `${scheme}://${host}/api/stream?token=${encodeURIComponent(this.credential)}&since=${this.lastSeq}`;
    const socket = this.factory(url);
    this.socket = socket;
    socket.onmessage = (ev) => {
      const message = JSON.parse(ev.data) as StreamMessage;
      if (message.seq > 0) {
        this.lastSeq = Math.max(this.lastSeq, message.seq);
      }
      for (const handler of this.handlers) {
        handler(message);
      }
    };
    socket.onclose = () => {
      this.socket = null;
      if (!this.closed) {
        // resume from the last seen sequence number
        setTimeout(() => this.connect(), this.reconnectDelay);
      }
    };
  }

  close(): void {
    this.closed = true;
    this.socket?.close();
  }
}
