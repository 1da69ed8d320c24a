import { readFileSync } from "node:fs";

import { AdapterConfig, configSchema, defaultConfig, serve } from "./adapter";

function loadConfig(argv: string[]): AdapterConfig {
  if (argv.length === 0) {
    return defaultConfig();
  }
  if (argv.length > 1) {
    throw new Error(`usage: main.js [config.json] (got ${argv.length} args)`);
  }
  const raw: unknown = JSON.parse(readFileSync(argv[0], "utf-8"));
  return configSchema.parse(raw);
}

async function main(): Promise<void> {
  const config = loadConfig(process.argv.slice(2));
  await serve(
    { input: process.stdin, output: process.stdout, errlog: process.stderr },
    config,
  );
}

main().catch((err: Error) => {
  process.stderr.write(`reference-adapter: ${err.message}\n`);
  process.exit(1);
});
