/** Browser entry: subscribe to /scene, fetch descriptions, render live. */
import { SceneRenderer } from "./render.js";
import { ViewerScene } from "./scene.js";
import { SceneSocket } from "./socket.js";
import { RobotDescription } from "./protocol.js";

function serverBase(): string {
  const override = new URLSearchParams(location.search).get("server");
  return override ?? `${location.protocol}//${location.host}`;
}

function wsUrl(base: string): string {
  return base.replace(/^http/, "ws") + "/scene";
}

async function fetchDescription(base: string, robotId: string):
    Promise<RobotDescription> {
  const resp = await fetch(`${base}/robots/${robotId}/description`);
  if (!resp.ok) throw new Error(`description for ${robotId}: HTTP ${resp.status}`);
  return resp.json() as Promise<RobotDescription>;
}

function main(): void {
  const canvas = document.getElementById("viewport") as HTMLCanvasElement;
  const banner = document.getElementById("banner") as HTMLDivElement;
  const tickLabel = document.getElementById("tick") as HTMLSpanElement;
  const base = serverBase();

  const renderer = new SceneRenderer(canvas);
  const scene = new ViewerScene();
  const fetching = new Set<string>();

  const socket = new SceneSocket(wsUrl(base));
  socket.onStatus = (status) => {
    banner.textContent = status === "connected" ? "" : `viewer ${status}...`;
    banner.style.display = status === "connected" ? "none" : "block";
  };
  socket.onMessage = (data) => {
    if (!scene.applySceneState(data)) return;
    tickLabel.textContent = `tick ${scene.latestTick}`;
    for (const robotId of scene.pendingDescriptions) {
      if (fetching.has(robotId)) continue;
      fetching.add(robotId);
      fetchDescription(base, robotId)
        .then((desc) => scene.addDescription(desc))
        .catch((err) => console.error(err))
        .finally(() => fetching.delete(robotId));
    }
    for (const [robotId, view] of scene.robots) {
      const desc = scene.descriptions.get(robotId);
      if (desc) renderer.updateRobot(desc, view);
      else renderer.showPlaceholder(robotId);
    }
  };
  socket.connect();

  const resize = () => renderer.resize(canvas.clientWidth, canvas.clientHeight);
  window.addEventListener("resize", resize);
  resize();

  // Local-only orbit: drag to rotate the camera around the work area.
  let dragging = false;
  let lastX = 0;
  let azimuth = -0.8;
  let polar = 1.05;
  const target = { x: 0.4, y: 0, z: 0.5 };
  const radius = 2.4;
  const updateCamera = () => {
    renderer.camera.position.set(
      target.x + radius * Math.sin(polar) * Math.cos(azimuth),
      target.y + radius * Math.sin(polar) * Math.sin(azimuth),
      target.z + radius * Math.cos(polar));
    renderer.camera.lookAt(target.x, target.y, target.z);
  };
  canvas.addEventListener("mousedown", (e) => { dragging = true; lastX = e.clientX; });
  window.addEventListener("mouseup", () => { dragging = false; });
  window.addEventListener("mousemove", (e) => {
    if (!dragging) return;
    azimuth -= (e.clientX - lastX) * 0.01;
    lastX = e.clientX;
    updateCamera();
  });
  updateCamera();

  const loop = () => {
    renderer.render();
    requestAnimationFrame(loop);
  };
  loop();
}

main();
