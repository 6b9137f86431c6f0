import * as path from "node:path";
import * as url from "node:url";

import { Gateway } from "./gateway.js";

function parseArgs(argv: string[]): Record<string, string> {
  const out: Record<string, string> = {};
  for (let i = 0; i < argv.length; i += 1) {
    if (argv[i].startsWith("--")) {
      out[argv[i].slice(2)] = argv[i + 1] ?? "";
      i += 1;
    }
  }
  return out;
}

const args = parseArgs(process.argv.slice(2));
const listen = Number(args.listen ?? "8080");
const upstream = args.upstream ?? "127.0.0.1:8800";
const [host, port] = upstream.split(":");
const here = path.dirname(url.fileURLToPath(import.meta.url));
const staticDir = args.static ?? path.resolve(here, "..", "..", "static");

Gateway.start({
  listen,
  upstreamHost: host,
  upstreamPort: Number(port),
  staticDir,
  serversFile: args.servers,
})
  .then((gateway) => {
    console.log(`gateway listening on http://127.0.0.1:${gateway.port} -> ${upstream}`);
  })
  .catch((err) => {
    console.error(`gateway failed to start: ${err}`);
    process.exit(1);
  });
