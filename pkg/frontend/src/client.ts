/** JSON-lines TCP client for the gateway. The dashboard talks to the
 * platform only through this class; there is no client-side policy logic. */

import * as net from "node:net";
import {
  GatewayError,
  Json,
  PROTOCOL_VERSION,
  PushEvent,
  Request,
  Response,
} from "./protocol.js";

type Pending = {
  resolve: (r: Response) => void;
  reject: (e: Error) => void;
};

export class GatewayClient {
  private sock: net.Socket;
  private buffer = "";
  private nextId = 1;
  private pending = new Map<number, Pending>();
  private eventHandlers: Array<(e: PushEvent) => void> = [];
  private closed = false;

  private constructor(sock: net.Socket) {
    this.sock = sock;
    sock.setEncoding("utf8");
    sock.on("data", (chunk: string) => this.onData(chunk));
    sock.on("close", () => this.onClose());
    sock.on("error", () => this.onClose());
  }

  static connect(host: string, port: number): Promise<GatewayClient> {
    return new Promise((resolve, reject) => {
      const sock = net.createConnection({ host, port }, () =>
        resolve(new GatewayClient(sock)),
      );
      sock.once("error", reject);
    });
  }

  private onData(chunk: string): void {
    this.buffer += chunk;
    let idx: number;
    while ((idx = this.buffer.indexOf("\n")) >= 0) {
      const line = this.buffer.slice(0, idx).trim();
      this.buffer = this.buffer.slice(idx + 1);
      if (!line) continue;
      const frame = JSON.parse(line);
      if (frame.event !== undefined) {
        for (const handler of this.eventHandlers) handler(frame.event);
        continue;
      }
      const waiter = this.pending.get(frame.id);
      if (waiter) {
        this.pending.delete(frame.id);
        waiter.resolve({ status: frame.status, body: frame.body });
      }
    }
  }

  private onClose(): void {
    if (this.closed) return;
    this.closed = true;
    for (const waiter of this.pending.values()) {
      waiter.reject(new Error("gateway connection closed"));
    }
    this.pending.clear();
  }

  /** Send one request frame; resolves with status + body (any status). */
  raw(req: Request): Promise<Response> {
    const id = this.nextId++;
    const frame = {
      v: PROTOCOL_VERSION,
      id,
      method: req.method,
      path: req.path,
      auth: req.auth ?? {},
      body: req.body ?? {},
    };
    return new Promise((resolve, reject) => {
      this.pending.set(id, { resolve, reject });
      this.sock.write(JSON.stringify(frame) + "\n");
    });
  }

  /** Like raw(), but a non-200 status becomes a GatewayError. */
  async request(req: Request): Promise<Record<string, Json>> {
    const r = await this.raw(req);
    if (r.status !== 200) throw new GatewayError(r.status, r.body);
    return r.body;
  }

  /** Opt in to server-initiated push frames; handler sees every event. */
  async subscribe(handler: (e: PushEvent) => void): Promise<void> {
    this.eventHandlers.push(handler);
    if (this.eventHandlers.length > 1) return; // already subscribed on the wire
    const id = this.nextId++;
    await new Promise<Response>((resolve, reject) => {
      this.pending.set(id, { resolve, reject });
      this.sock.write(
        JSON.stringify({ v: PROTOCOL_VERSION, id, subscribe: true }) + "\n",
      );
    });
  }

  close(): void {
    this.closed = true;
    this.sock.destroy();
  }
}

/** An authenticated view over the client: logs in once, then stamps the
 * session onto every request. */
export class Session {
  private constructor(
    readonly client: GatewayClient,
    readonly userId: string,
    private readonly sessionId: string,
  ) {}

  static async login(client: GatewayClient, userId: string): Promise<Session> {
    const body = await client.request({
      method: "POST",
      path: "/session",
      body: { user_id: userId },
    });
    return new Session(client, userId, body.session as string);
  }

  request(method: string, path: string, body?: Record<string, Json>) {
    return this.client.request({
      method,
      path,
      auth: { session: this.sessionId },
      body,
    });
  }
}
