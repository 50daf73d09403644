import { GatewayClient } from "./api";
import { ChatConsole } from "./app";

const root = document.getElementById("app");
if (root !== null) {
  const client = new GatewayClient(window.location.origin);
  const console_ = new ChatConsole(root, client);
  void console_.start();
}
