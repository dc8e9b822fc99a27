import { ServiceClient } from "./api.js";
import { Viewer } from "./viewer.js";

async function boot(): Promise<void> {
  const params = new URLSearchParams(location.search);
  const base = params.get("service") ?? "http://127.0.0.1:8000";
  const client = new ServiceClient(base);
  const root = document.getElementById("app")!;
  const status = document.getElementById("status")!;

  const rejoin = params.get("session");
  if (rejoin) {
    try {
      const meta = await client.getSession(rejoin);
      new Viewer(root, client, meta);
      status.textContent = `rejoined session ${meta.id}`;
      return;
    } catch {
      status.textContent = "session not found; upload a volume to start";
    }
  }

  const picker = document.getElementById("volume") as HTMLInputElement;
  picker.addEventListener("change", async () => {
    const file = picker.files?.[0];
    if (!file) return;
    status.textContent = `uploading ${file.name}…`;
    try {
      const meta = await client.createSession(await file.arrayBuffer());
      history.replaceState(null, "", `?service=${encodeURIComponent(base)}&session=${meta.id}`);
      new Viewer(root, client, meta);
      status.textContent = `session ${meta.id}: ${meta.dims.join("×")}`;
    } catch (err) {
      status.textContent = `upload failed: ${err}`;
    }
  });
}

void boot();
