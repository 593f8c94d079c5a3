/**
 * Wire types for the decision server.
 *
 * One JSON object per line in each direction. Arrays travel as base64
 * little-endian float64 with explicit shape metadata; nothing else is
 * binary. The field names below mirror the server's snake_case records,
 * converted here once so the rest of the package stays camelCase.
 */
import { Buffer } from "node:buffer";
import { endianness } from "node:os";

/** Dense row-major float64 tensor. */
export interface F64Tensor {
  shape: readonly number[];
  values: Float64Array;
}

/** How a tensor crosses the pipe. */
export interface ArrayPayload {
  shape: number[];
  data: string;
}

export type TrackStatus = "tracked" | "lost";

/** Instruction to re-extract the embedding for one 1-based bag slot. */
export interface SlotUpdate {
  slot: number;
  box: number[];
}

/** One frame's answer. `slotUpdate` is null when no slot accepted the frame. */
export interface Decision {
  frameIndex: number;
  status: TrackStatus;
  box: number[];
  confidence: number;
  rs: number;
  selectedIndex: number | null;
  slotUpdate: SlotUpdate | null;
  error?: string;
}

export interface BridgeStats {
  openSessions: number;
  peakSessions: number;
  totalOpened: number;
  totalSteps: number;
}

function elementCount(shape: readonly number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

/** Encode a tensor for the wire. Throws RangeError on shape/value mismatch. */
export function packTensor(tensor: F64Tensor): ArrayPayload {
  const { shape, values } = tensor;
  if (shape.length === 0 || shape.some((d) => !Number.isInteger(d) || d <= 0)) {
    throw new RangeError(`tensor shape must be positive integers, got [${shape}]`);
  }
  const count = elementCount(shape);
  if (values.length !== count) {
    throw new RangeError(`shape [${shape}] holds ${count} values, got ${values.length}`);
  }
  let bytes = Buffer.from(values.buffer, values.byteOffset, values.byteLength);
  if (endianness() !== "LE") {
    bytes = Buffer.from(bytes); // copy before the in-place byte swap
    bytes.swap64();
  }
  return { shape: [...shape], data: bytes.toString("base64") };
}

/** Decode a wire payload into a fresh, aligned Float64Array. */
export function unpackTensor(payload: ArrayPayload): F64Tensor {
  const count = elementCount(payload.shape);
  let bytes = Buffer.from(payload.data, "base64");
  if (bytes.byteLength !== count * 8) {
    throw new RangeError(
      `payload carries ${bytes.byteLength} bytes but shape [${payload.shape}] needs ${count * 8}`,
    );
  }
  if (endianness() !== "LE") {
    bytes = Buffer.from(bytes);
    bytes.swap64();
  }
  // copy out: base64 decoding may land in Node's shared buffer pool
  const aligned = new Uint8Array(count * 8);
  aligned.set(bytes);
  return { shape: [...payload.shape], values: new Float64Array(aligned.buffer) };
}

export function decisionFromWire(raw: Record<string, unknown>): Decision {
  const decision: Decision = {
    frameIndex: raw.frame_index as number,
    status: raw.status as TrackStatus,
    box: raw.box as number[],
    confidence: raw.confidence as number,
    rs: raw.rs as number,
    selectedIndex: (raw.selected_index ?? null) as number | null,
    slotUpdate: null,
  };
  const update = raw.slot_update as { slot: number; box: number[] } | null | undefined;
  if (update) {
    decision.slotUpdate = { slot: update.slot, box: update.box };
  }
  if (typeof raw.error === "string") {
    decision.error = raw.error;
  }
  return decision;
}

export function statsFromWire(raw: Record<string, unknown>): BridgeStats {
  return {
    openSessions: raw.open_sessions as number,
    peakSessions: raw.peak_sessions as number,
    totalOpened: raw.total_opened as number,
    totalSteps: raw.total_steps as number,
  };
}
