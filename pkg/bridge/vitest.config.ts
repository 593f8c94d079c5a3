import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    // every test spawns a Python child and speaks over pipes
    testTimeout: 120_000,
    hookTimeout: 30_000,
  },
});
