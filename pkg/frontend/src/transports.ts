/** Line transports for the NDJSON protocol. */

import { Transport } from "./protocol.js";

/** Browser transport; assumes a WebSocket endpoint bridging the stream. */
export class WebSocketTransport implements Transport {
  private ws: WebSocket;
  private lineHandler: (line: string) => void = () => undefined;
  private closeHandler: () => void = () => undefined;
  private buffer = "";

  constructor(url: string) {
    this.ws = new WebSocket(url);
    this.ws.onmessage = (event) => this.feed(String(event.data));
    this.ws.onclose = () => this.closeHandler();
  }

  private feed(chunk: string): void {
    this.buffer += chunk;
    let idx;
    while ((idx = this.buffer.indexOf("\n")) >= 0) {
      const line = this.buffer.slice(0, idx);
      this.buffer = this.buffer.slice(idx + 1);
      this.lineHandler(line);
    }
  }

  send(line: string): void {
    this.ws.send(line);
  }

  onLine(handler: (line: string) => void): void {
    this.lineHandler = handler;
  }

  onClose(handler: () => void): void {
    this.closeHandler = handler;
  }

  close(): void {
    this.ws.close();
  }
}

/** Node transport connecting straight to the TCP server. */
export class TcpTransport implements Transport {
  private socket: import("node:net").Socket;
  private lineHandler: (line: string) => void = () => undefined;
  private closeHandler: () => void = () => undefined;
  private buffer = "";

  private constructor(socket: import("node:net").Socket) {
    this.socket = socket;
    socket.setEncoding("utf-8");
    socket.on("data", (chunk: string) => {
      this.buffer += chunk;
      let idx;
      while ((idx = this.buffer.indexOf("\n")) >= 0) {
        const line = this.buffer.slice(0, idx);
        this.buffer = this.buffer.slice(idx + 1);
        this.lineHandler(line);
      }
    });
    socket.on("close", () => this.closeHandler());
  }

  static async connect(host: string, port: number): Promise<TcpTransport> {
    const net = await import("node:net");
    return new Promise((resolve, reject) => {
      const socket = net.createConnection({ host, port }, () =>
        resolve(new TcpTransport(socket)),
      );
      socket.on("error", reject);
    });
  }

  send(line: string): void {
    this.socket.write(line);
  }

  onLine(handler: (line: string) => void): void {
    this.lineHandler = handler;
  }

  onClose(handler: () => void): void {
    this.closeHandler = handler;
  }

  close(): void {
    this.socket.end();
  }
}
