import pytest

from caravan.errors import Conflict, NotFound, ValidationFailure
from caravan.plugins import register_builtin_plugins
from caravan.registry import ParamDescriptor, PluginDescriptor, PluginRegistry, encode_value


def make_descriptor(plugin_id="demo", stage="preprocess", params=(), **overrides):
    fields = dict(
        plugin_id=plugin_id,
        version="1.0",
        stage=stage,
        title="Demo plugin",
        description="Does demo things to columns.",
        params=tuple(params),
    )
    fields.update(overrides)
    return PluginDescriptor(**fields)


def lr_param(**overrides):
    fields = dict(
        name="learning_rate",
        kind="float",
        default=0.1,
        range=(1e-6, 10.0),
        description="Step size.",
    )
    fields.update(overrides)
    return ParamDescriptor(**fields)


@pytest.fixture
def registry():
    reg = PluginRegistry()
    register_builtin_plugins(reg)
    return reg


class TestRegister:
    def test_registered_plugin_listed(self):
        reg = PluginRegistry()
        reg.register(make_descriptor(), lambda params: None)
        assert [d.plugin_id for d in reg.list_plugins(stage="preprocess")] == ["demo"]

    def test_duplicate_id_conflict(self):
        reg = PluginRegistry()
        reg.register(make_descriptor(), lambda params: None)
        with pytest.raises(Conflict):
            reg.register(make_descriptor(), lambda params: None)

    def test_same_id_other_stage_allowed(self):
        reg = PluginRegistry()
        reg.register(make_descriptor(stage="preprocess"), lambda params: None)
        reg.register(
            make_descriptor(stage="train", algorithm_class="classical"), lambda params: None
        )
        assert len(reg.list_plugins()) == 2

    def test_empty_plugin_description_rejected(self):
        with pytest.raises(ValidationFailure):
            PluginRegistry().register(make_descriptor(description="  "), lambda p: None)

    def test_empty_param_description_names_param(self):
        descriptor = make_descriptor(params=[lr_param(description="")])
        with pytest.raises(ValidationFailure) as excinfo:
            PluginRegistry().register(descriptor, lambda p: None)
        assert any(name == "learning_rate" for name, _ in excinfo.value.details)

    def test_default_outside_range_rejected(self):
        descriptor = make_descriptor(params=[lr_param(default=99.0)])
        with pytest.raises(ValidationFailure):
            PluginRegistry().register(descriptor, lambda p: None)


class TestListPlugins:
    def test_deterministic_order(self, registry):
        ids = [(d.stage, d.plugin_id) for d in registry.list_plugins()]
        assert ids == sorted(ids, key=lambda pair: pair)

    def test_stage_and_class_filters(self, registry):
        autoencoders = registry.list_plugins(stage="train", algorithm_class="autoencoder")
        assert [d.plugin_id for d in autoencoders] == ["autoencoder"]

    def test_unknown_class_empty(self, registry):
        assert registry.list_plugins(algorithm_class="quantum") == []

    def test_builtin_count(self, registry):
        assert len(registry.list_plugins(stage="preprocess")) == 6
        assert len(registry.list_plugins(stage="train")) == 3


class TestValidate:
    def test_defaults_applied(self, registry):
        params = registry.validate("minmax_scaler", "preprocess", {})
        assert params == {"feature_range": [0, 1]}

    def test_below_minimum_reported(self, registry):
        with pytest.raises(ValidationFailure) as excinfo:
            registry.validate("softmax_regression", "train", {"learning_rate": "-1"})
        assert ("learning_rate", "below minimum") in excinfo.value.details

    def test_unknown_parameter_reported(self, registry):
        with pytest.raises(ValidationFailure) as excinfo:
            registry.validate("softmax_regression", "train", {"foo": "1"})
        assert ("foo", "unknown parameter") in excinfo.value.details

    def test_all_violations_reported_at_once(self, registry):
        with pytest.raises(ValidationFailure) as excinfo:
            registry.validate(
                "autoencoder",
                "train",
                {"learning_rate": "999", "epochs": "-5", "activation": "tanh", "zzz": "1"},
            )
        names = {name for name, _ in excinfo.value.details}
        assert names == {"learning_rate", "epochs", "activation", "zzz"}

    def test_typed_json_values_accepted(self, registry):
        params = registry.validate(
            "autoencoder",
            "train",
            {"encoder_layers": [16, 4], "learning_rate": 0.05, "epochs": 3},
        )
        assert params["encoder_layers"] == [16, 4]
        assert params["learning_rate"] == 0.05

    def test_bool_parsing(self, registry):
        assert registry.validate("tfidf_transform", "preprocess", {"smooth": "false"}) == {
            "smooth": False
        }

    def test_int_list_parsing(self, registry):
        params = registry.validate("autoencoder", "train", {"encoder_layers": "32,8"})
        assert params["encoder_layers"] == [32, 8]

    def test_empty_int_list_rejected(self, registry):
        with pytest.raises(ValidationFailure):
            registry.validate("autoencoder", "train", {"encoder_layers": ""})

    def test_unknown_plugin_not_found(self, registry):
        with pytest.raises(NotFound):
            registry.validate("mystery", "preprocess", {})

    def test_validate_idempotent_via_encoding(self, registry):
        params = registry.validate(
            "autoencoder", "train", {"encoder_layers": "8,3", "learning_rate": "0.25"}
        )
        encoded = registry.encode_params("autoencoder", "train", params)
        assert registry.validate("autoencoder", "train", encoded) == params

    def test_every_builtin_round_trips_defaults(self, registry):
        for descriptor in registry.list_plugins():
            params = registry.validate(descriptor.plugin_id, descriptor.stage, {})
            encoded = registry.encode_params(descriptor.plugin_id, descriptor.stage, params)
            assert registry.validate(descriptor.plugin_id, descriptor.stage, encoded) == params


class TestBuiltinConformance:
    def test_every_builtin_fully_described(self, registry):
        plugins = registry.list_plugins()
        assert len(plugins) == 9
        for descriptor in plugins:
            assert descriptor.title.strip()
            assert descriptor.description.strip()
            for param in descriptor.params:
                assert param.description.strip(), f"{descriptor.plugin_id}.{param.name}"

    def test_encode_value_round_trip_types(self):
        assert encode_value("bool", True) == "true"
        assert encode_value("int_list", [8, 3]) == "8,3"
        assert encode_value("float", 0.1) == "0.1"
        assert float(encode_value("float", 1e-8)) == 1e-8
