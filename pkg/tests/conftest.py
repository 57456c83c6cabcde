from __future__ import annotations

import pytest

from robomesh.registry import RegistryServer
from robomesh.runtime import NodeHandle
from robomesh.transport import EndpointConfig


@pytest.fixture()
def registry_server():
    with RegistryServer(port=0) as srv:
        yield srv


class NodeFactory:
    """Creates loopback-mode nodes against one registry and cross-wires their
    peer lists immediately (instead of waiting a heartbeat period)."""

    def __init__(self, registry_address):
        self.registry_address = registry_address
        self.nodes: list[NodeHandle] = []

    def __call__(self, name: str, **endpoint_kwargs) -> NodeHandle:
        cfg = EndpointConfig(udp="loopback", **endpoint_kwargs)
        node = NodeHandle(name, registry=self.registry_address, endpoint_config=cfg)
        self.nodes.append(node)
        self.rewire()
        return node

    def rewire(self):
        for n in self.nodes:
            for m in self.nodes:
                if m is not n:
                    n._endpoint.add_peer(*m._endpoint.address)

    def close(self):
        for n in self.nodes:
            n.shutdown()


@pytest.fixture()
def node_factory(registry_server):
    factory = NodeFactory(registry_server.address)
    yield factory
    factory.close()
