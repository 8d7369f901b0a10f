import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    environment: "node",
    // the integration suite trains a small model and runs live agents
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
