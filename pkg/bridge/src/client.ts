/**
 * Child-process client for the decision server.
 *
 * `Bridge.start()` spawns the Python server next to this package and speaks
 * line-delimited JSON over its stdio. One bridge can hold many sessions, each
 * tracking one sequence; the host correlates its own templates and sends the
 * score grids here, the server answers with the selected box and, when a bag
 * slot accepted the frame, the slot whose embedding the host must replace.
 *
 * Requests are answered in order on a single pipe, so neither the bridge nor
 * its sessions may be shared across threads. Within one thread, interleaving
 * sessions is fine.
 */
import { spawn, type ChildProcessWithoutNullStreams } from "node:child_process";
import { once } from "node:events";
import { createInterface } from "node:readline";
import { fileURLToPath } from "node:url";

import {
  decisionFromWire,
  packTensor,
  statsFromWire,
  type BridgeStats,
  type Decision,
  type F64Tensor,
} from "./protocol.js";

/** A refused request. `kind` mirrors the server's error taxonomy. */
export class BridgeError extends Error {
  constructor(
    readonly kind: string,
    message: string,
  ) {
    super(message);
    this.name = "BridgeError";
  }
}

interface Pending {
  resolve: (reply: Record<string, unknown>) => void;
  reject: (error: Error) => void;
}

// resolves to bridge/server.py from both src/ and dist/
const SERVER_PATH = fileURLToPath(new URL("../server.py", import.meta.url));

export interface BridgeOptions {
  /** Interpreter for the server; MTTRACK_BRIDGE_PYTHON or "python3" if unset. */
  python?: string;
}

export class Bridge {
  private nextId = 1;
  private readonly pending = new Map<number, Pending>();
  private stderrTail = "";
  private exited = false;

  private constructor(private readonly child: ChildProcessWithoutNullStreams) {
    const lines = createInterface({ input: child.stdout });
    lines.on("line", (line) => this.dispatch(line));
    child.stderr.on("data", (chunk: Buffer) => {
      this.stderrTail = (this.stderrTail + chunk.toString()).slice(-4096);
    });
    child.stdin.on("error", () => {
      // EPIPE after a crash; the exit handler rejects the waiters
    });
    child.on("exit", () => {
      this.exited = true;
      const detail = this.stderrTail.trim();
      const error = new BridgeError("io", detail ? `server exited: ${detail}` : "server exited");
      for (const waiter of this.pending.values()) {
        waiter.reject(error);
      }
      this.pending.clear();
    });
  }

  /** Spawn the server and wait until it answers. */
  static async start(options: BridgeOptions = {}): Promise<Bridge> {
    const python = options.python ?? process.env.MTTRACK_BRIDGE_PYTHON ?? "python3";
    const child = spawn(python, [SERVER_PATH], { stdio: ["pipe", "pipe", "pipe"] });
    const bridge = new Bridge(child);
    await bridge.stats(); // handshake: the interpreter started and found the library
    return bridge;
  }

  /** Server process id, for external resource checks. */
  get pid(): number | undefined {
    return this.child.pid;
  }

  private dispatch(line: string): void {
    let reply: Record<string, unknown>;
    try {
      reply = JSON.parse(line) as Record<string, unknown>;
    } catch {
      return; // the server writes only JSON lines; ignore anything else
    }
    if (typeof reply.id !== "number") {
      return;
    }
    const waiter = this.pending.get(reply.id);
    if (!waiter) {
      return;
    }
    this.pending.delete(reply.id);
    if (reply.ok) {
      waiter.resolve(reply);
    } else {
      const error = (reply.error ?? {}) as { kind?: string; message?: string };
      waiter.reject(new BridgeError(error.kind ?? "protocol", error.message ?? "request failed"));
    }
  }

  /** @internal */
  request(op: string, body: Record<string, unknown> = {}): Promise<Record<string, unknown>> {
    if (this.exited) {
      return Promise.reject(new BridgeError("io", "server process has exited"));
    }
    const id = this.nextId++;
    const reply = new Promise<Record<string, unknown>>((resolve, reject) => {
      this.pending.set(id, { resolve, reject });
    });
    this.child.stdin.write(JSON.stringify({ id, op, ...body }) + "\n");
    return reply;
  }

  /**
   * Open a tracking session from a flat `key = value` config document.
   *
   * The document takes the library's bag.*, fusion.* and selector.* keys plus
   * a bridge section: `bridge.init_box` (required, "x,y,w,h" pixels) and
   * `bridge.model` (optional path to a saved path-predictor model).
   */
  async open(config: string): Promise<BridgeSession> {
    const reply = await this.request("open", { config });
    return new BridgeSession(this, reply.session as number, reply.slots as number);
  }

  async stats(): Promise<BridgeStats> {
    const reply = await this.request("stats");
    return statsFromWire(reply.stats as Record<string, unknown>);
  }

  /** Stop the server and wait for the process to end. */
  async shutdown(): Promise<void> {
    if (!this.exited) {
      try {
        await this.request("shutdown");
      } catch {
        // already dying; the wait below still applies
      }
      this.child.stdin.end();
      const timer = new Promise<false>((resolve) => {
        setTimeout(() => resolve(false), 5000).unref();
      });
      const gone = await Promise.race([once(this.child, "exit").then(() => true), timer]);
      if (!gone) {
        this.child.kill("SIGKILL");
      }
    }
  }
}

/** Handle to one server-side tracking sequence. */
export class BridgeSession {
  constructor(
    private readonly bridge: Bridge,
    readonly id: number,
    /** Bag size n: the host must send exactly this many score grids per step. */
    readonly slots: number,
  ) {}

  /**
   * Feed one frame's scores and receive the decision.
   *
   * `scoreMaps` is [n, H, W] with scoreMaps[i] the host's correlation of bag
   * slot i + 1 against the frame. `candidateBoxes` is [H, W, 4] with the
   * pixel box [x, y, w, h] each cell refers to, or [n, H, W, 4] when the
   * grids differ per slot. `frameDims` is [width, height] in pixels.
   */
  async step(
    scoreMaps: F64Tensor,
    candidateBoxes: F64Tensor,
    frameDims: readonly [number, number],
  ): Promise<Decision> {
    const reply = await this.bridge.request("step", {
      session: this.id,
      score_maps: packTensor(scoreMaps),
      candidate_boxes: packTensor(candidateBoxes),
      frame_dims: frameDims,
    });
    return decisionFromWire(reply.decision as Record<string, unknown>);
  }

  /** Release the server-side state. Every later call on this session fails. */
  async close(): Promise<void> {
    await this.bridge.request("close", { session: this.id });
  }
}
