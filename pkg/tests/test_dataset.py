import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cprec.dataset import (
    ContextFeature,
    ContextSchema,
    RatingsDataset,
    SplitSpec,
    decode_context,
    denormalize_rating,
    encode_context,
    load_interactions,
    normalize_rating,
    one_hot_index,
    rating_matrix,
    split,
    synth_generate,
    user_rating_vector,
    write_csv,
)
from cprec.errors import DataError

DAY = ContextFeature("TimeOfDay", "ordinal", ("Night", "Morning", "Afternoon", "Evening", "Late"))
LOC = ContextFeature("Location", "quantitative", bounds=(0.0, 1.0))


def tiny(users, items, ratings, contexts=None, schema=ContextSchema(), n_users=None, n_items=None):
    n_users = n_users or max(users) + 1
    n_items = n_items or max(items) + 1
    contexts = np.zeros((len(users), schema.dimension)) if contexts is None else contexts
    return RatingsDataset(
        users, items, contexts, ratings,
        [f"u{k}" for k in range(n_users)], [f"i{k}" for k in range(n_items)], schema, (1.0, 5.0),
    )


# -- encoding ---------------------------------------------------------------


def test_encode_ordinal_and_binary_example():
    schema = ContextSchema((DAY, LOC))
    v = encode_context(schema, {"TimeOfDay": "Evening", "Location": 1})
    np.testing.assert_array_equal(v, [0.75, 1.0])


def test_encode_quantitative_at_min_bound_is_zero():
    schema = ContextSchema((ContextFeature("Hour", "quantitative", bounds=(0, 23)),))
    assert encode_context(schema, {"Hour": 0})[0] == 0.0
    assert encode_context(schema, {"Hour": 23})[0] == 1.0


def test_encode_nominal_third_of_four():
    schema = ContextSchema((ContextFeature("Weather", "nominal", ("sun", "rain", "snow", "fog")),))
    np.testing.assert_array_equal(encode_context(schema, {"Weather": "snow"}), [0, 0, 1, 0])


def test_encode_missing_feature_gives_zero_block():
    schema = ContextSchema((ContextFeature("A", "nominal", ("x", "y")), LOC))
    np.testing.assert_array_equal(encode_context(schema, {"Location": 0.5}), [0, 0, 0.5])
    np.testing.assert_array_equal(encode_context(schema, {"A": None}), [0, 0, 0])


def test_encode_errors():
    schema = ContextSchema((ContextFeature("A", "nominal", ("x", "y")), LOC))
    with pytest.raises(DataError, match="Location"):
        encode_context(schema, {"Location": 1.5})
    with pytest.raises(DataError, match="unknown context feature"):
        encode_context(schema, {"Mood": "happy"})
    with pytest.raises(DataError, match="'A'"):
        encode_context(schema, {"A": "z"})


@pytest.mark.parametrize("index,dim,expected", [(2, 5, [0, 0, 1, 0, 0]), (0, 1, [1]), (4, 5, [0, 0, 0, 0, 1])])
def test_one_hot_index(index, dim, expected):
    np.testing.assert_array_equal(one_hot_index(index, dim), expected)


@pytest.mark.parametrize("index,dim", [(5, 5), (-1, 3)])
def test_one_hot_index_out_of_range(index, dim):
    with pytest.raises(DataError):
        one_hot_index(index, dim)


def test_nominal_round_trip_every_value():
    schema = ContextSchema((
        ContextFeature("Companion", "nominal", ("Alone", "Partner", "Family")),
        ContextFeature("Time", "nominal", ("Weekday", "Weekend")),
    ))
    for comp in ("Alone", "Partner", "Family"):
        for t in ("Weekday", "Weekend"):
            raw = {"Companion": comp, "Time": t}
            assert decode_context(schema, encode_context(schema, raw)) == raw


def test_schema_dict_round_trip():
    schema = ContextSchema((DAY, LOC, ContextFeature("W", "nominal", ("a", "b"))))
    assert ContextSchema.from_dict(schema.to_dict()) == schema
    assert schema.dimension == 4


def test_duplicate_feature_names_rejected():
    with pytest.raises(DataError):
        ContextSchema((LOC, LOC))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 23), min_size=1, max_size=200), st.integers(0, 4))
def test_encoded_components_in_unit_interval(hours, day):
    schema = ContextSchema((ContextFeature("Hour", "quantitative", bounds=(0, 23)), DAY))
    for h in hours:
        v = encode_context(schema, {"Hour": h, "TimeOfDay": DAY.values[day]})
        assert np.all((v >= 0) & (v <= 1))


def test_normalization_bounds_bulk(rng):
    schema = ContextSchema((ContextFeature("Temp", "quantitative", bounds=(-10, 35)), DAY))
    temps = rng.uniform(-10, 35, size=10_000)
    levels = rng.integers(0, 5, size=10_000)
    vs = np.array([encode_context(schema, {"Temp": t, "TimeOfDay": DAY.values[k]}) for t, k in zip(temps, levels)])
    assert vs.min() >= 0.0 and vs.max() <= 1.0


@settings(max_examples=100, deadline=None)
@given(st.floats(1, 5))
def test_rating_normalization_round_trip(r):
    for conv in ("minmax", "max"):
        z = normalize_rating(r, (1, 5), conv)
        assert 0 <= z <= 1
        assert denormalize_rating(z, (1, 5), conv) == pytest.approx(r, abs=1e-12)


def test_rating_normalization_conventions():
    assert normalize_rating(4.5, (1, 5)) == 0.875
    assert normalize_rating(4.5, (1, 5), "max") == 0.9


# -- ingestion --------------------------------------------------------------


def test_load_hand_counted_csv(toy_csv):
    ds = load_interactions(toy_csv, "depaul")
    assert (ds.n_users, ds.n_items, len(ds)) == (4, 4, 10)
    assert ds.user_ids == ("1", "2", "3", "4")
    assert ds.item_ids == ("10", "11", "12", "13")
    # 10 rows over 16 (user, item) cells; 8 distinct contexts
    assert ds.density_pair() == pytest.approx(10 / 16)
    assert ds.n_distinct_contexts() == 8
    assert ds.density_triple() == pytest.approx(10 / (16 * 8))
    assert ds.global_mean == pytest.approx(34 / 10)
    assert ds.schema.dimension == 7


def test_load_keeps_last_duplicate(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("user,item,rating\na,x,2\na,y,3\na,x,5\n")
    ds = load_interactions(p)
    assert len(ds) == 2
    assert sorted(ds.ratings.tolist()) == [3.0, 5.0]


def test_load_empty_file_with_header(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("userid,itemid,rating,Time,Location,Companion\n")
    ds = load_interactions(p, "depaul")
    assert len(ds) == 0 and ds.n_users == 0 and ds.n_items == 0


def test_load_errors_carry_line_numbers(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("user,item,rating\na,x,4\nb,y\n")
    with pytest.raises(DataError, match="line 3"):
        load_interactions(p)
    p.write_text("user,item,rating\na,x,4\nb,y,7\n")
    with pytest.raises(DataError, match="line 3.*outside scale"):
        load_interactions(p)
    p.write_text("userid,itemid,rating,Time,Location,Companion\n1,2,3,Weekday,Moon,Alone\n")
    with pytest.raises(DataError, match="Location"):
        load_interactions(p, "depaul")


def test_load_inferred_domain_and_column_map(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("U,I,Score,mood\n1,1,3,10\n2,1,4,2\n2,2,5,NA\n")
    ds = load_interactions(
        p, schema=ContextSchema((ContextFeature("mood", "nominal"),)),
        columns={"user": "u", "item": "i", "rating": "score"},
    )
    assert ds.schema.feature("mood").values == ("2", "10")
    np.testing.assert_array_equal(ds.contexts, [[0, 1], [1, 0], [0, 0]])


def test_write_csv_round_trip(tmp_path, small_synth):
    data, _ = small_synth
    path = tmp_path / "s.csv"
    write_csv(data, path)
    back = load_interactions(path, schema=data.schema)
    assert len(back) == len(data)
    np.testing.assert_array_equal(back.ratings, data.ratings)
    np.testing.assert_array_equal(back.contexts, data.contexts)
    assert [back.user_ids[u] for u in back.users] == [data.user_ids[u] for u in data.users]


# -- splitting --------------------------------------------------------------


def test_split_sizes_follow_floor_rule():
    data, _ = synth_generate(97, 79, 3, 5043, seed=0)
    train, cal, test = split(data, SplitSpec(0.7, 0.15, 0.15, seed=42))
    # floor(0.15 * 5043) = 756 for both held-out shares; the rest trains
    assert (len(train), len(cal), len(test)) == (3531, 756, 756)


def test_split_deterministic(small_synth):
    data, _ = small_synth
    a = split(data, SplitSpec(seed=9))
    b = split(data, SplitSpec(seed=9))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.users, y.users)
        np.testing.assert_array_equal(x.ratings, y.ratings)


def test_split_partition_over_seeds():
    data, _ = synth_generate(12, 10, 1, 100, seed=1)
    keys = {(int(u), int(i)) for u, i in zip(data.users, data.items)}
    for seed in range(100):
        parts = split(data, SplitSpec(seed=seed))
        sets = [{(int(u), int(i)) for u, i in zip(p.users, p.items)} for p in parts]
        assert sum(len(s) for s in sets) == len(data)
        assert set().union(*sets) == keys
        assert not (sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2])


def test_split_too_small():
    data = tiny(list(range(10)), [0] * 10, [3.0] * 10)
    with pytest.raises(DataError, match="empty"):
        split(data, SplitSpec(0.98, 0.01, 0.01))


@pytest.mark.parametrize("fractions", [(0.7, 0.2, 0.2), (0.8, 0.0, 0.2)])
def test_split_spec_validation(fractions):
    with pytest.raises(DataError):
        SplitSpec(*fractions)


# -- rating vectors ---------------------------------------------------------


def test_user_rating_vector_cases():
    schema = ContextSchema((ContextFeature("T", "nominal", ("a", "b")),))
    ctx = np.array([[1, 0], [0, 1], [1, 0]], dtype=float)
    data = tiny([0, 0, 1], [3, 3, 1], [4.0, 5.0, 4.0], ctx, schema, n_users=3, n_items=5)
    vec, obs = user_rating_vector(data, 0)
    assert vec[3] == 4.5 and obs.tolist() == [3]
    vec, obs = user_rating_vector(data, 1)
    assert vec.tolist() == [0, 4.0, 0, 0, 0] and obs.tolist() == [1]
    vec, obs = user_rating_vector(data, 2)
    assert not vec.any() and obs.size == 0
    with pytest.raises(DataError):
        user_rating_vector(data, 3)
    m, mask = rating_matrix(data, by="item")
    assert m.shape == (5, 3) and m[3, 0] == 4.5 and mask.sum() == 2


# -- synthetic --------------------------------------------------------------


def test_synth_deterministic():
    a, _ = synth_generate(5, 4, 1, 20, seed=1)
    b, _ = synth_generate(5, 4, 1, 20, seed=1)
    np.testing.assert_array_equal(a.users, b.users)
    np.testing.assert_array_equal(a.contexts, b.contexts)
    np.testing.assert_array_equal(a.ratings, b.ratings)


def test_synth_full_density_and_infeasible():
    data, _ = synth_generate(5, 4, 1, 20, seed=1)
    assert data.density_pair() == 1.0
    with pytest.raises(DataError):
        synth_generate(5, 4, 1, 21, seed=1)


def test_synth_noiseless_matches_planted():
    data, planted = synth_generate(10, 8, 2, 50, seed=2, bias_scale=0.2, context_scale=0.3)
    assert planted.n_clipped == 0
    np.testing.assert_allclose(planted.expected(data.users, data.items, data.contexts), data.ratings)


def test_dataset_is_immutable(small_synth):
    data, _ = small_synth
    with pytest.raises(ValueError):
        data.ratings[0] = 1.0
