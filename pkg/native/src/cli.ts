/** stdin/stdout entry point: one protocol request per invocation. */

import { handleRequest } from "./protocol";

function main() {
  const chunks: Buffer[] = [];
  process.stdin.on("data", (c: Buffer) => chunks.push(c));
  process.stdin.on("end", () => {
    try {
      process.stdout.write(handleRequest(Buffer.concat(chunks)));
    } catch (err) {
      process.stderr.write(`protocol error: ${(err as Error).message}\n`);
      process.exit(1);
    }
  });
}

main();
