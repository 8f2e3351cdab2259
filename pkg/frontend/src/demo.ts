/**
 * Terminal demo client: connects to a live TCP session and mirrors the
 * stream, acknowledging suggestions as they arrive.
 *
 *   controlroom serve --scenario s1 --port 9301 --agents <dir> &
 *   npm run demo -- 127.0.0.1 9301
 */

import { SessionStore } from "./store.js";
import { TcpTransport } from "./transports.js";

async function main(): Promise<void> {
  const host = process.argv[2] ?? "127.0.0.1";
  const port = Number(process.argv[3] ?? 9301);
  const store = new SessionStore("GroupAI");
  const transport = await TcpTransport.connect(host, port);
  store.attach(transport);
  transport.onClose(() => {
    console.log("session ended");
    process.exit(0);
  });

  setInterval(() => {
    const pressure = store.values["PSERB_1"];
    const alarms = [...store.alarms.keys()].join(",") || "-";
    const suggestion = store.suggestion
      ? `${store.suggestion.abnormality_id}/${store.suggestion.value ?? "interval"}`
      : "-";
    console.log(
      `t=${store.t} P=${pressure?.toFixed(3) ?? "-"} alarms=[${alarms}] ` +
        `suggestion=${suggestion} blink=${store.blink}`,
    );
    if (store.blink) {
      store.acknowledgeSuggestion();
    }
  }, 1000);
}

main().catch((err) => {
  console.error(err);
  process.exit(1);
});
