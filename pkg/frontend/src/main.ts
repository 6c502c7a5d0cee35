/** Browser bootstrap: read the runtime config, mount the dashboard. */

import { ApiClient } from "./api.js";
import { Dashboard } from "./app.js";
import { RuntimeConfig } from "./types.js";

async function loadConfig(): Promise<RuntimeConfig> {
  try {
    const response = await fetch("./config.json");
    if (response.ok) {
      return (await response.json()) as RuntimeConfig;
    }
  } catch {
    /* fall through to the default */
  }
  return { apiBaseUrl: "http://127.0.0.1:8330" };
}

async function start(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app mount point");
  const config = await loadConfig();
  const dashboard = new Dashboard({
    root,
    client: new ApiClient(config.apiBaseUrl),
    getHash: () => window.location.hash,
    setHash: (hash) => {
      // hash assignment never reloads the document
      if (window.location.hash.slice(1) !== hash) {
        window.location.hash = hash;
      }
    },
  });
  await dashboard.init();
}

void start();
