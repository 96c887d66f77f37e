import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    testTimeout: 30000,
    hookTimeout: 30000,
    // the live suite talks to one spawned server; keep files sequential
    fileParallelism: false,
  },
});
