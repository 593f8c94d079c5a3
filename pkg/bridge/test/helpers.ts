import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";

import type { ArrayPayload, F64Tensor } from "../src/index.js";

export interface ExpectedDecision {
  frame_index: number;
  status: string;
  box: number[];
  confidence: number;
  rs: number;
  selected_index: number | null;
  updated_slot: number | null;
}

export interface FixtureFrame {
  maps: ArrayPayload;
  boxes: ArrayPayload;
  expected: ExpectedDecision;
}

export interface Fixture {
  config: string;
  model_file: string;
  dims: [number, number];
  slots: number;
  counts: {
    tracked: number;
    lost: number;
    updates: number;
    updated_slots: number[];
    reacquired: boolean;
  };
  scenario_seed: number;
  frames: FixtureFrame[];
}

/** Load the recorded sequence, config pointed at the bundled model file. */
export function loadFixture(): Fixture {
  const raw = readFileSync(new URL("./fixtures/fixture.json", import.meta.url), "utf8");
  const fixture = JSON.parse(raw) as Fixture;
  const modelPath = fileURLToPath(new URL(`./fixtures/${fixture.model_file}`, import.meta.url));
  fixture.config = fixture.config.replace("__MODEL_PATH__", modelPath);
  return fixture;
}

/** A uniform [1, size, size] score grid at `base` with one peak cell. */
export function peakMaps(size: number, row: number, col: number, peak: number): F64Tensor {
  const values = new Float64Array(size * size).fill(0.1);
  values[row * size + col] = peak;
  return { shape: [1, size, size], values };
}

/** A [size, size, 4] grid of `cell`-pixel boxes tiling the frame. */
export function tileBoxes(size: number, cell: number): F64Tensor {
  const values = new Float64Array(size * size * 4);
  for (let row = 0; row < size; row++) {
    for (let col = 0; col < size; col++) {
      const at = (row * size + col) * 4;
      values[at] = col * cell;
      values[at + 1] = row * cell;
      values[at + 2] = cell;
      values[at + 3] = cell;
    }
  }
  return { shape: [size, size, 4], values };
}

/** Single-slot config: fused map is the sent map, first step selects its argmax. */
export const SINGLE_SLOT_CONFIG = [
  "bag.n = 1",
  "bag.slot_weights = |",
  "bag.fusion_weights = 1.0",
  "selector.sc_init = 0.0",
  "bridge.init_box = 24.0,24.0,16.0,16.0",
].join("\n");
